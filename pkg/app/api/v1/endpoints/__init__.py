# API endpoints package