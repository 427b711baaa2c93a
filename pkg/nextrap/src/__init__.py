"""Core implementatie modules voor nextrap"""
