use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::trainer::{rank_scores, ScoreRow};

#[derive(Debug, Error, PartialEq)]
#[error("rankings cover different sample ids")]
pub struct IdMismatch;

fn same_ids(a: &[ScoreRow], b: &[ScoreRow]) -> Result<(), IdMismatch> {
    let sa: HashSet<&str> = a.iter().map(|r| r.sample_id.as_str()).collect();
    let sb: HashSet<&str> = b.iter().map(|r| r.sample_id.as_str()).collect();
    if a.len() != b.len() || sa != sb || sa.len() != a.len() {
        return Err(IdMismatch);
    }
    Ok(())
}

/// Alternately takes the next unseen head of `a` and `b`, starting with `a`;
/// the merged position `p` gets score `1 / p`.
pub fn aggregate_bfs(a: &[ScoreRow], b: &[ScoreRow]) -> Result<Vec<ScoreRow>, IdMismatch> {
    same_ids(a, b)?;
    let mut seen = HashSet::with_capacity(a.len());
    let mut out = Vec::with_capacity(a.len());
    let (mut ia, mut ib) = (0, 0);
    let mut from_a = true;
    while out.len() < a.len() {
        let (list, pos) = if from_a { (a, &mut ia) } else { (b, &mut ib) };
        while *pos < list.len() && seen.contains(list[*pos].sample_id.as_str()) {
            *pos += 1;
        }
        if *pos < list.len() {
            let id = list[*pos].sample_id.clone();
            seen.insert(list[*pos].sample_id.as_str());
            let rank = out.len() + 1;
            out.push(ScoreRow {
                sample_id: id,
                score: 1.0 / rank as f64,
                rank,
            });
        }
        from_a = !from_a;
    }
    Ok(out)
}

/// `1 / rank_a + 1 / rank_b`, sorted descending (ties by id).
pub fn aggregate_inverse_rank(a: &[ScoreRow], b: &[ScoreRow]) -> Result<Vec<ScoreRow>, IdMismatch> {
    same_ids(a, b)?;
    let rb: HashMap<&str, usize> = b.iter().map(|r| (r.sample_id.as_str(), r.rank)).collect();
    let ids: Vec<String> = a.iter().map(|r| r.sample_id.clone()).collect();
    let scores: Vec<f64> = a
        .iter()
        .map(|r| 1.0 / r.rank as f64 + 1.0 / rb[r.sample_id.as_str()] as f64)
        .collect();
    Ok(rank_scores(&ids, &scores))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(ids: &[&str]) -> Vec<ScoreRow> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| ScoreRow {
                sample_id: id.to_string(),
                score: (ids.len() - i) as f64,
                rank: i + 1,
            })
            .collect()
    }

    fn order(r: &[ScoreRow]) -> Vec<&str> {
        r.iter().map(|x| x.sample_id.as_str()).collect()
    }

    #[test]
    fn bfs_examples() {
        let a = ranking(&["x", "y", "z"]);
        assert_eq!(aggregate_bfs(&a, &ranking(&["y", "w", "z"])), Err(IdMismatch));
        assert_eq!(order(&aggregate_bfs(&a, &ranking(&["y", "x", "z"])).unwrap()), ["x", "y", "z"]);
        assert_eq!(order(&aggregate_bfs(&a, &a).unwrap()), ["x", "y", "z"]);
    }

    #[test]
    fn inverse_rank_examples() {
        let a = ranking(&["x", "y", "z"]);
        let b = ranking(&["y", "x", "z"]);
        let m = aggregate_inverse_rank(&a, &b).unwrap();
        assert_eq!(m[0].score, 1.5);
        let m = aggregate_inverse_rank(&a, &a).unwrap();
        assert_eq!((m[0].sample_id.as_str(), m[0].score), ("x", 2.0));
    }
}
