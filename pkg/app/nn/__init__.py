# Minimal tensor engine: tape-based reverse mode, SC-attention layer set, Adam
