# Double-RIS channel estimation application package