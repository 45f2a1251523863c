"""Master/worker execution over TCP."""
