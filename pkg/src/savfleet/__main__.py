from savfleet.cli import main

raise SystemExit(main())
