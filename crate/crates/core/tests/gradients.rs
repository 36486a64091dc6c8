mod common;

macro_rules! grad_tests {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                common::$name().unwrap();
            }
        )*
    };
}

grad_tests!(
    projections,
    attention,
    attention_resize,
    attention_unit,
    window_mlp,
    disparity_regression,
    normalisation,
    warp,
    relative_loss,
    reconstruction_loss,
    smoothness_loss,
    focal_map_loss,
    triplet_loss,
    focal_classification_loss,
);
