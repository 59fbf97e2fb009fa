//! Shared fixtures for pipeline tests.

use std::path::Path;

/// Write a synthetic dataset trio in MovieLens-100k format: `n_users` users
/// rating a structured slice of `n_items` items. Ratings follow a smooth
/// user-affinity × genre pattern so models have signal to learn.
pub fn synthetic_movielens(dir: &Path, n_users: u32, n_items: u32, seed: u64) {
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };

    let genres = 19usize;
    let mut u_item = String::new();
    for item in 1..=n_items {
        let mut flags = vec!["0"; genres];
        flags[(item as usize * 3) % genres] = "1";
        if item % 4 == 0 {
            flags[(item as usize * 5 + 1) % genres] = "1";
        }
        u_item.push_str(&format!(
            "{item}|Item {item} (1990)|01-Jan-1990||http://example/{item}|{}\n",
            flags.join("|")
        ));
    }
    std::fs::write(dir.join("u.item"), u_item).unwrap();

    let occupations = ["writer", "engineer", "artist", "doctor", "other"];
    let mut u_user = String::new();
    for user in 1..=n_users {
        let age = 18 + (next() % 50);
        let sex = if next() % 2 == 0 { "M" } else { "F" };
        let occ = occupations[(next() % occupations.len() as u64) as usize];
        u_user.push_str(&format!("{user}|{age}|{sex}|{occ}|00000\n"));
    }
    std::fs::write(dir.join("u.user"), u_user).unwrap();

    let mut u_data = String::new();
    for user in 1..=n_users {
        let affinity = (user as f64 * 2.399) % std::f64::consts::TAU;
        // each user rates a contiguous window of items plus a few extras
        let count = 12 + (next() % 10) as u32;
        for k in 0..count {
            let item = 1 + ((user * 7 + k * 3 + (next() % 5) as u32) % n_items);
            let genre_phase = ((item * 3) % 19) as f64 / 19.0 * std::f64::consts::TAU;
            let raw = 3.0 + 1.8 * (affinity - genre_phase).cos();
            let rating = raw.round().clamp(1.0, 5.0) as u32;
            let ts = 800_000_000 + (next() % 100_000_000);
            u_data.push_str(&format!("{user}\t{item}\t{rating}\t{ts}\n"));
        }
    }
    std::fs::write(dir.join("u.data"), u_data).unwrap();
}

/// JSONL bytes with every `wall_ms` value zeroed, for determinism
/// comparisons.
pub fn normalize_jsonl(text: &str) -> String {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|line| {
            let mut v: serde_json::Value = serde_json::from_str(line).expect("valid record");
            if let Some(obj) = v.as_object_mut() {
                obj.insert("wall_ms".into(), serde_json::Value::from(0u64));
            }
            serde_json::to_string(&v).expect("serializable")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Compare two run directories' JSONL outputs modulo `wall_ms`.
pub fn assert_runs_identical(a: &Path, b: &Path) {
    let list = |d: &Path| {
        let mut v: Vec<_> = std::fs::read_dir(d)
            .unwrap()
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        v.sort();
        v
    };
    let fa = list(a);
    let fb = list(b);
    assert_eq!(
        fa.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>(),
        fb.iter().map(|p| p.file_name().unwrap().to_owned()).collect::<Vec<_>>(),
        "file sets differ"
    );
    for (pa, pb) in fa.iter().zip(&fb) {
        let ta = std::fs::read_to_string(pa).unwrap();
        let tb = std::fs::read_to_string(pb).unwrap();
        assert_eq!(
            normalize_jsonl(&ta),
            normalize_jsonl(&tb),
            "{} differs",
            pa.file_name().unwrap().to_string_lossy()
        );
    }
}
