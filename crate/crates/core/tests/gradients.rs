use hseq_core::corpus::Vocabulary;
use hseq_core::{NetworkSpec, Seq2Seq};
use hseq_numcore::{gradient_check, GradCheckOptions, NumError, Stencil};

fn vocab(n: usize) -> Vocabulary {
    Vocabulary::with_words((0..n).map(|i| format!("t{i}"))).unwrap()
}

fn check(spec: NetworkSpec, src: &[usize], tgt: &[usize]) -> f64 {
    let model = Seq2Seq::<f64>::with_init_scale(spec, 17, 1.0).unwrap();
    let mut store = model.params().clone();
    let report = gradient_check(
        &mut store,
        |g, s| {
            let (sum, n) = model
                .batch_loss_on(g, s, &[(src, tgt)])
                .map_err(|e| NumError::Format(e.to_string()))?;
            Ok(g.scale(sum, 1.0 / n as f64))
        },
        &GradCheckOptions { eps: 1e-3, stencil: Stencil::Fourth, ..Default::default() },
    )
    .unwrap();
    println!("{:?}", report);
    report.max_rel_error
}

#[test]
fn coarse_network_gradients() {
    let spec = NetworkSpec::coarse(vocab(3), vocab(4), 3);
    let err = check(spec, &[4, 5, 6], &[7, 5, 4]);
    println!("max relative error {err}");
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn fine_network_gradients() {
    let spec = NetworkSpec::fine(vocab(3), 2);
    let err = check(spec, &[4, 5], &[6, 6, 4]);
    println!("max relative error {err}");
    assert!(err < 1e-4, "max relative error {err}");
}

