//! Built-in gridworld corpus: training, validation and small oracle maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::GridWorld;

pub const TRAIN_8: [&str; 3] = [
    include_str!("../../maps/train8_a.txt"),
    include_str!("../../maps/train8_b.txt"),
    include_str!("../../maps/train8_c.txt"),
];

pub const TRAIN_16: [&str; 3] = [
    include_str!("../../maps/train16_a.txt"),
    include_str!("../../maps/train16_b.txt"),
    include_str!("../../maps/train16_c.txt"),
];

pub const VALIDATION_8: [&str; 3] = [
    include_str!("../../maps/val8_a.txt"),
    include_str!("../../maps/val8_b.txt"),
    include_str!("../../maps/val8_c.txt"),
];

pub const SMALL_5: [&str; 3] = [
    include_str!("../../maps/small5_a.txt"),
    include_str!("../../maps/small5_b.txt"),
    include_str!("../../maps/small5_c.txt"),
];

/// Named maps written out by the `gen-maps` command.
pub fn named_maps() -> Vec<(String, &'static str)> {
    let groups: [(&str, &[&'static str]); 4] = [
        ("train8", &TRAIN_8),
        ("train16", &TRAIN_16),
        ("val8", &VALIDATION_8),
        ("small5", &SMALL_5),
    ];
    let mut out = Vec::new();
    for (prefix, maps) in groups {
        for (i, text) in maps.iter().enumerate() {
            out.push((format!("{prefix}_{}", (b'a' + i as u8) as char), *text));
        }
    }
    out
}

fn parse_all(maps: &[&str]) -> Vec<GridWorld> {
    maps.iter()
        .map(|m| GridWorld::parse(m).expect("built-in map parses"))
        .collect()
}

pub fn train_8() -> Vec<GridWorld> {
    parse_all(&TRAIN_8)
}

pub fn train_16() -> Vec<GridWorld> {
    parse_all(&TRAIN_16)
}

pub fn validation_8() -> Vec<GridWorld> {
    parse_all(&VALIDATION_8)
}

pub fn small_5() -> Vec<GridWorld> {
    parse_all(&SMALL_5)
}

/// Random rectangular obstacles on an open grid. Free cells cut off from the
/// largest connected region are walled in, so the result is connected.
pub fn generate_obstacle_grid(
    width: usize,
    height: usize,
    obstacle_fraction: f64,
    seed: u64,
) -> GridWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wall = vec![false; width * height];
    let target = (obstacle_fraction.clamp(0.0, 0.8) * (width * height) as f64) as usize;
    let mut walled = 0;
    let mut attempts = 0;
    while walled < target && attempts < 10_000 {
        attempts += 1;
        let w = rng.gen_range(1..=(width / 6).max(2));
        let h = rng.gen_range(1..=(height / 6).max(2));
        let col = rng.gen_range(0..width.saturating_sub(w).max(1));
        let row = rng.gen_range(0..height.saturating_sub(h).max(1));
        for r in row..(row + h).min(height) {
            for c in col..(col + w).min(width) {
                if !wall[r * width + c] {
                    wall[r * width + c] = true;
                    walled += 1;
                }
            }
        }
    }
    keep_largest_region(width, height, &mut wall);
    let text: String = (0..height)
        .map(|r| {
            let mut line: String = (0..width)
                .map(|c| if wall[r * width + c] { '#' } else { '.' })
                .collect();
            line.push('\n');
            line
        })
        .collect();
    GridWorld::parse(&text).expect("generated map parses")
}

fn keep_largest_region(width: usize, height: usize, wall: &mut [bool]) {
    let mut label = vec![usize::MAX; wall.len()];
    let mut sizes = Vec::new();
    for seed in 0..wall.len() {
        if wall[seed] || label[seed] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut stack = vec![seed];
        label[seed] = id;
        let mut size = 0;
        while let Some(cell) = stack.pop() {
            size += 1;
            let (r, c) = (cell / width, cell % width);
            let mut push = |nr: usize, nc: usize| {
                let n = nr * width + nc;
                if !wall[n] && label[n] == usize::MAX {
                    label[n] = id;
                    stack.push(n);
                }
            };
            if r > 0 {
                push(r - 1, c);
            }
            if r + 1 < height {
                push(r + 1, c);
            }
            if c > 0 {
                push(r, c - 1);
            }
            if c + 1 < width {
                push(r, c + 1);
            }
        }
        sizes.push(size);
    }
    if let Some(best) = (0..sizes.len()).max_by_key(|&i| (sizes[i], usize::MAX - i)) {
        for (cell, l) in label.iter().enumerate() {
            if !wall[cell] && *l != best {
                wall[cell] = true;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::shortest_distances;

    #[test]
    fn corpus_shapes_and_connectivity() {
        for (maps, size) in [(train_8(), 8), (validation_8(), 8), (train_16(), 16), (small_5(), 5)] {
            for m in maps {
                assert_eq!((m.width(), m.height()), (size, size));
                let d = shortest_distances(m.graph(), 0).unwrap();
                assert!((0..m.graph().node_count()).all(|v| d.is_reachable(v)));
            }
        }
    }

    #[test]
    fn generated_grid_is_connected_and_deterministic() {
        let a = generate_obstacle_grid(32, 32, 0.2, 5);
        let b = generate_obstacle_grid(32, 32, 0.2, 5);
        assert_eq!(a.to_map_string(), b.to_map_string());
        let d = shortest_distances(a.graph(), 0).unwrap();
        assert!((0..a.graph().node_count()).all(|v| d.is_reachable(v)));
        assert!(a.graph().node_count() < 32 * 32);
        assert!(a.graph().node_count() > 32 * 32 / 2);
    }
}
