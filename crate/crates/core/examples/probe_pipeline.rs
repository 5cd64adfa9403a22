//! Development probe: archetype recovery quality at small scale.

use trajcast::features::extract_all;
use trajcast::preference::{adjusted_rand_index, identify_preferences, PreferenceConfig};
use trajcast::trajdata::{gen_synthetic, preprocess_all, window_samples, SynthConfig, DEFAULT_SMOOTHING_S};

fn main() {
    let t0 = std::time::Instant::now();
    let cfg = SynthConfig {
        trajectory_count: 120,
        duration_s: 40.0, // 400 frames -> 12 windows at stride 10... actually (400-290)/10+1 = 12
        seed: 42,
        ..SynthConfig::default()
    };
    let raw = gen_synthetic(&cfg).unwrap();
    let set = preprocess_all(&raw, DEFAULT_SMOOTHING_S).unwrap();
    let windows: Vec<_> = window_samples(&set, 60)
        .into_iter()
        .filter(|w| w.archetype_label.is_some())
        .collect();
    println!("windows: {} ({:.1?})", windows.len(), t0.elapsed());

    let rows: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| extract_all(&w.behavior_segment).to_row().to_vec())
        .collect();
    let truth: Vec<usize> = windows
        .iter()
        .map(|w| w.archetype_label.unwrap() as usize)
        .collect();

    let pref_cfg = PreferenceConfig {
        seed: 7,
        ..PreferenceConfig::default()
    };
    let art = identify_preferences(&rows, &pref_cfg).unwrap();
    println!("k = {} silhouettes = {:?}", art.k, art.silhouette_by_k);
    let ari = adjusted_rand_index(&art.labels, &truth);
    println!("ARI vs archetypes = {ari:.3}");
    println!("selected ({}): {:?}", art.selected.len(), art.selected);
    println!(
        "importance top 8: {:?}",
        &art.importance[..8.min(art.importance.len())]
    );
    println!("total {:.1?}", t0.elapsed());
}
