"""Command handlers, one module per group of subcommands"""
