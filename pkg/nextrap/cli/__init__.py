"""CLI interfaces: python -m nextrap.cli.main <subcommand>"""
