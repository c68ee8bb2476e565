macro_rules! example {
    ($module:ident, $file:literal) => {
        mod $module {
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));
        }

        #[test]
        fn $module() {
            $module::run_example().expect(concat!($file, " should run"));
        }
    };
}

example!(quickstart, "quickstart.rs");
example!(lsh_templates, "lsh_templates.rs");
example!(weighted_setup, "weighted_setup.rs");
example!(entropy_estimates, "entropy_estimates.rs");
example!(error_rates, "error_rates.rs");
example!(baseline_comparison, "baseline_comparison.rs");
example!(keyed_prf, "keyed_prf.rs");
example!(wire_service, "wire_service.rs");
example!(persistence, "persistence.rs");
