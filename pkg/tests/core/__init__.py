# Test configuration module
