//! Edit distance by the textbook recursion on suffixes, memoized per pair.

fn go(a: &[u8], b: &[u8], memo: &mut [[Option<usize>; 9]; 9]) -> usize {
    if let Some(v) = memo[a.len()][b.len()] {
        return v;
    }
    let v = match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let keep = go(ra, rb, memo) + usize::from(x != y);
            let drop_a = go(ra, b, memo) + 1;
            let drop_b = go(a, rb, memo) + 1;
            keep.min(drop_a).min(drop_b)
        }
    };
    memo[a.len()][b.len()] = Some(v);
    v
}

/// Lengths up to 8.
pub fn recursive_distance(a: &[u8], b: &[u8]) -> usize {
    assert!(a.len() <= 8 && b.len() <= 8);
    go(a, b, &mut [[None; 9]; 9])
}

/// Every sequence over `0..symbols` of length at most `max_len`.
pub fn all_sequences(symbols: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s: &Vec<u8>| {
                (0..symbols).map(move |c| {
                    let mut n = s.clone();
                    n.push(c);
                    n
                })
            })
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out
}
