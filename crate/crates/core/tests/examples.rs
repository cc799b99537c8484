// Every example must keep running end to end.

mod anchored_ensembles {
    include!("../examples/anchored_ensembles.rs");

    #[test]
    fn runs() {
        main();
    }
}

mod ensemble_selection {
    include!("../examples/ensemble_selection.rs");

    #[test]
    fn runs() {
        main();
    }
}

mod experiment_harness {
    include!("../examples/experiment_harness.rs");

    #[test]
    fn runs() {
        main();
    }
}

mod metrics_basics {
    include!("../examples/metrics_basics.rs");

    #[test]
    fn runs() {
        main();
    }
}

mod nes_vs_baselines {
    include!("../examples/nes_vs_baselines.rs");

    #[test]
    fn runs() {
        main();
    }
}

mod prediction_store {
    include!("../examples/prediction_store.rs");

    #[test]
    fn runs() {
        main();
    }
}

mod search_spaces {
    include!("../examples/search_spaces.rs");

    #[test]
    fn runs() {
        main();
    }
}

mod shift_adaptation {
    include!("../examples/shift_adaptation.rs");

    #[test]
    fn runs() {
        main();
    }
}

mod synthetic_benchmark {
    include!("../examples/synthetic_benchmark.rs");

    #[test]
    fn runs() {
        main();
    }
}

mod toy_search {
    include!("../examples/toy_search.rs");

    #[test]
    fn runs() {
        main();
    }
}

mod toy_training {
    include!("../examples/toy_training.rs");

    #[test]
    fn runs() {
        main();
    }
}
