//! Finite-difference gradient checks, one test per operation group.

#[path = "suites/gradient_checks.rs"]
mod checks;

macro_rules! gradient_tests {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                checks::$name();
            }
        )*

        #[test]
        fn every_check_is_listed() {
            let listed: Vec<&str> = checks::CHECKS.iter().map(|(n, _)| *n).collect();
            assert_eq!(listed, [$(stringify!($name)),*]);
        }
    };
}

gradient_tests!(
    basic_encoder,
    scalable_encoder_with_residual_fusion,
    cross_guided_gate,
    decoder_with_fusion_gate,
    channel_select_passes_gradients_to_kept_channels,
    gaussian_likelihood_and_rate,
    noise_quantization_is_a_unit_slope,
    factorized_priors,
    hyperprior_paths,
    mutual_entropy_model,
    composite_loss_all_parameters,
    sampled_loss_with_floor_weights_and_ms_ssim_metric,
    ms_ssim_against_its_reference,
);
