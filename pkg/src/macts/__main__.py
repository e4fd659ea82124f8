from macts.cli import main_entry

main_entry()
