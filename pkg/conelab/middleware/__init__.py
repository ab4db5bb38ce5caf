"""Wrappers applied around every command"""
