"""One-class recognition toolkit."""
