"""Multi-view registration of unordered range scans."""
