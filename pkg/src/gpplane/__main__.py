from gpplane.cli import main

main()
