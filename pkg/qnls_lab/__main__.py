from qnls_lab.main import main

raise SystemExit(main())
