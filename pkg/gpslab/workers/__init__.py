"""
Command runners
One job function per CLI command, driving the services
"""
