//! Runs every example and checks its headline numbers.

mod fourier_identities {
    include!("../examples/fourier_identities.rs");

    #[test]
    fn runs() {
        let (fourier, residual) = run_example();
        assert!(fourier <= 1e-10 && residual <= 1e-9);
    }
}

mod almost_analytic_extension {
    include!("../examples/almost_analytic_extension.rs");

    #[test]
    fn runs() {
        let (restriction, slope) = run_example();
        assert!(restriction <= 1e-10 && slope < 0.0);
    }
}

mod conjugated_operator {
    include!("../examples/conjugated_operator.rs");

    #[test]
    fn runs() {
        let (spectral, flux) = run_example();
        assert!(spectral <= 1e-8 && flux < 1e-1);
    }
}

mod conjugation_residual {
    include!("../examples/conjugation_residual.rs");

    #[test]
    fn runs() {
        assert!(run_example() < 0.0);
    }
}

mod admissible_weight {
    include!("../examples/admissible_weight.rs");

    #[test]
    fn runs() {
        let (lambda, b_margin) = run_example();
        assert!(lambda >= 1.0 && b_margin >= 0.0);
    }
}

mod subelliptic_sweep {
    include!("../examples/subelliptic_sweep.rs");

    #[test]
    fn runs() {
        let (maxima, bounded) = run_example();
        assert!(bounded);
        assert_eq!(maxima.len(), 6);
        assert!(maxima.iter().all(|m| m.is_finite() && *m > 0.0));
    }
}

mod unique_continuation {
    include!("../examples/unique_continuation.rs");

    #[test]
    fn runs() {
        let (delta, rate) = run_example();
        assert!(delta > 0.0 && rate > 0.0);
    }
}

mod cli_pipeline {
    include!("../examples/cli_pipeline.rs");

    #[test]
    fn runs() {
        let (pass, csv) = run_example();
        assert!(pass && csv.lines().count() > 1);
    }
}
