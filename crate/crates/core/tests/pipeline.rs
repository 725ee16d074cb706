use lanechange::extraction::{extract_corpus, ExtractionConfig};
use lanechange::synth::{generate_corpus, SynthConfig};
use lanechange::{CameraIntrinsics, Execution};

#[test]
fn noiseless_corpus_classes_recovered() {
    let cfg = SynthConfig {
        n_mlc: 100,
        n_dlc: 300,
        n_ambiguous: 50,
        n_other: 50,
        pixel_noise: 0.0,
        frame_drop_probability: 0.0,
        seed: 42,
        ..SynthConfig::default()
    };
    let k = CameraIntrinsics::default();
    let corpus = generate_corpus(&cfg, &k, Execution::Parallel).unwrap();
    let trips: Vec<_> = corpus.iter().map(|t| t.trip.clone()).collect();
    let out = extract_corpus(&trips, &ExtractionConfig::default(), Execution::Parallel);
    let mut agree = 0;
    let mut total = 0;
    let mut worst: f64 = 0.0;
    for (st, ex) in corpus.iter().zip(&out) {
        assert!(ex.incomplete.is_empty(), "{:?}", ex.incomplete);
        assert_eq!(st.events.len(), ex.events.len());
        for (p, e) in st.events.iter().zip(&ex.events) {
            total += 1;
            if p.true_class == e.classification {
                agree += 1;
            } else {
                eprintln!("{} planted {:?} {:?} got {:?}", p.event_id, p.true_class, p.other_kind, e.classification);
            }
            for (a, b) in [
                (p.t_head_start, e.stage.t_head_start),
                (p.t_cross_start, e.stage.t_cross_start),
                (p.t_cross_end, e.stage.t_cross_end),
                (p.t_tail_end, e.stage.t_tail_end),
            ] {
                worst = worst.max((a - b).abs());
            }
        }
    }
    eprintln!("agree {agree}/{total} worst stage error {worst}");
    assert_eq!(agree, total);
    assert!(worst < 0.15);
}
