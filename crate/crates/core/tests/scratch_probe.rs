//! Temporary calibration probe (deleted before finalizing).

use realism_core::fixtures::texture_domain_image;
use realism_core::imgio::ImageTensor;
use realism_core::styledist::{r_style, DisentangleConfig};

#[test]
#[ignore]
fn probe_r_style_band() {
    let res = 16;
    let a: Vec<ImageTensor> = (0..6)
        .map(|i| texture_domain_image(0, res, 0.02 * i as f64, 300 + i as u64))
        .collect();
    let p = a.clone();
    for (steps, adv, lr, seed) in [
        (1500usize, 0.2f64, 1e-3f64, 37u64),
        (1500, 0.2, 1e-3, 38),
        (1500, 0.2, 1e-3, 39),
        (1500, 0.2, 1e-3, 40),
        (2500, 0.1, 2e-3, 37),
        (2500, 0.1, 2e-3, 38),
        (2500, 0.1, 2e-3, 39),
        (2500, 0.1, 2e-3, 40),
    ] {
        let cfg = DisentangleConfig {
            resolution: res,
            base_channels: 8,
            steps,
            seed,
            lambda_adv: adv,
            lr,
            batch: 4,
            ..DisentangleConfig::default()
        };
        let out = r_style(&a, &p, &cfg).unwrap();
        println!(
            "steps={steps} adv={adv} lr={lr} seed={seed}: ratio={:.4} iob_a={:.4} iob_m={:.4}",
            out.value, out.iob_a, out.iob_m
        );
    }
}
