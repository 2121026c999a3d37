use voxscore::metrics::EvalOptions;
use voxscore::score_batch;
use voxscore::synth::{evaluate_dataset, generate_dataset, synth_score_config, tokenize_dataset, SynthSpec};

#[test]
fn every_anomalous_volume_outscores_every_normal_one() {
    let spec = SynthSpec {
        n_normal: 10,
        n_anomalous: 4,
        ..SynthSpec::default()
    };
    let data = generate_dataset(&spec).unwrap();
    let config = synth_score_config(&spec);
    let tokens = tokenize_dataset(&data, &spec, &config).unwrap();
    let scores = score_batch(&tokens, &config).unwrap();
    let (normal, anomalous): (Vec<_>, Vec<_>) = scores
        .volumes
        .iter()
        .zip(&data)
        .partition(|(_, d)| d.lesion.is_none());
    let max_normal = normal.iter().map(|(s, _)| s.patient.score).fold(f64::MIN, f64::max);
    let min_anomalous = anomalous.iter().map(|(s, _)| s.patient.score).fold(f64::MAX, f64::min);
    assert!(min_anomalous > max_normal, "{min_anomalous} <= {max_normal}");

    let refs: Vec<_> = scores.volumes.iter().collect();
    let (report, lesions) = evaluate_dataset(&data, &refs, &EvalOptions::default()).unwrap();
    assert_eq!(report.patient_auroc, 1.0);
    assert_eq!(lesions.len(), 4);
    assert!(report.voxel_auroc > 0.9);

    // The token overlapping each lesion most scores above normal-volume tokens.
    let (p, grid) = (spec.patch, spec.size / spec.patch);
    let mut lesion_tokens = Vec::new();
    for (s, d) in anomalous {
        let mut best = (0, 0.0);
        for (flat, &score) in s.coarse.iter().enumerate() {
            let (a, b, c) = (flat / (grid * grid), flat / grid % grid, flat % grid);
            let mut hits = 0;
            for x in a * p..(a + 1) * p {
                for y in b * p..(b + 1) * p {
                    for z in c * p..(c + 1) * p {
                        hits += d.ground_truth.data[(x * spec.size + y) * spec.size + z] as usize;
                    }
                }
            }
            if hits > best.0 {
                best = (hits, score as f64);
            }
        }
        lesion_tokens.push(best.1);
    }
    let normal_tokens: Vec<f64> = normal
        .iter()
        .flat_map(|(s, _)| s.coarse.iter().zip(tokens[0].keep()).filter(|(_, &k)| k != 0).map(|(&v, _)| v as f64))
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&lesion_tokens) > mean(&normal_tokens), "{} <= {}", mean(&lesion_tokens), mean(&normal_tokens));
}
