from crgan.cli import main

main()
