//! Line-oriented text interchange:
//!
//! ```text
//! VIEWGRAPH v1
//! # comment
//! NODE <id> [qw qx qy qz]
//! EDGE <u> <v> <qw> <qx> <qy> <qz> [0|1]
//! ```

use std::fmt::Write as _;

use super::{Edge, ViewGraph};
use crate::error::{Error, Result};
use crate::so3::UnitQuaternion;

pub const FORMAT_HEADER: &str = "VIEWGRAPH v1";

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        reason: reason.into(),
    }
}

fn parse_id(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(line, format!("expected a non-negative integer id, got `{tok}`")))
}

fn parse_quat(toks: &[&str], line: usize) -> Result<UnitQuaternion> {
    let mut q = [0.0; 4];
    for (slot, tok) in q.iter_mut().zip(toks) {
        *slot = tok
            .parse::<f64>()
            .map_err(|_| parse_err(line, format!("expected a number, got `{tok}`")))?;
    }
    UnitQuaternion::from_unit_wxyz(q[0], q[1], q[2], q[3]).map_err(|e| parse_err(line, e.to_string()))
}

pub fn parse(text: &str) -> Result<ViewGraph> {
    let mut header_seen = false;
    let mut nodes: Vec<(usize, usize, Option<UnitQuaternion>)> = Vec::new();
    let mut edges: Vec<(usize, Edge)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        if !header_seen {
            if toks.len() == 2 && toks[0] == "VIEWGRAPH" && toks[1] == "v1" {
                header_seen = true;
                continue;
            }
            return Err(parse_err(lineno, format!("expected `{FORMAT_HEADER}` header")));
        }
        match toks[0] {
            "NODE" => {
                let gt = match toks.len() {
                    2 => None,
                    6 => Some(parse_quat(&toks[2..6], lineno)?),
                    n => {
                        return Err(parse_err(
                            lineno,
                            format!("NODE takes 1 or 5 fields, found {}", n - 1),
                        ))
                    }
                };
                nodes.push((lineno, parse_id(toks[1], lineno)?, gt));
            }
            "EDGE" => {
                let label = match toks.len() {
                    7 => None,
                    8 => match toks[7] {
                        "0" => Some(false),
                        "1" => Some(true),
                        other => {
                            return Err(parse_err(
                                lineno,
                                format!("outlier label must be 0 or 1, got `{other}`"),
                            ))
                        }
                    },
                    n => {
                        return Err(parse_err(
                            lineno,
                            format!("EDGE takes 6 or 7 fields, found {}", n - 1),
                        ))
                    }
                };
                let u = parse_id(toks[1], lineno)?;
                let v = parse_id(toks[2], lineno)?;
                let q = parse_quat(&toks[3..7], lineno)?;
                edges.push((
                    lineno,
                    Edge {
                        u,
                        v,
                        q,
                        gt_outlier: label,
                    },
                ));
            }
            other => return Err(parse_err(lineno, format!("unknown record `{other}`"))),
        }
    }
    if !header_seen {
        return Err(parse_err(1, format!("missing `{FORMAT_HEADER}` header")));
    }

    let n = nodes.len();
    let mut gt = vec![None; n];
    let mut defined = vec![false; n];
    for &(lineno, id, q) in &nodes {
        if id >= n {
            return Err(parse_err(
                lineno,
                format!("node id {id} not dense: {n} nodes declared"),
            ));
        }
        if defined[id] {
            return Err(parse_err(lineno, format!("duplicate node {id}")));
        }
        defined[id] = true;
        gt[id] = q;
    }

    let mut seen = std::collections::HashSet::new();
    for (lineno, e) in &edges {
        if e.u >= n || e.v >= n {
            return Err(parse_err(*lineno, format!("edge references unknown node ({}, {})", e.u, e.v)));
        }
        if e.u == e.v {
            return Err(parse_err(*lineno, format!("self-loop on node {}", e.u)));
        }
        if !seen.insert((e.u.min(e.v), e.u.max(e.v))) {
            return Err(parse_err(*lineno, format!("duplicate edge ({}, {})", e.u, e.v)));
        }
    }
    ViewGraph::new(gt, edges.into_iter().map(|(_, e)| e).collect())
}

pub fn serialize(g: &ViewGraph) -> String {
    serialize_with_comments(g, &[])
}

/// Serialises with leading `# ...` comment lines.
pub fn serialize_with_comments(g: &ViewGraph, comments: &[&str]) -> String {
    let mut out = String::with_capacity(64 * (g.n_nodes() + g.n_edges()) + 32);
    out.push_str(FORMAT_HEADER);
    out.push('\n');
    for c in comments {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    for (i, q) in g.gt_slice().iter().enumerate() {
        match q {
            Some(q) => {
                let _ = writeln!(out, "NODE {i} {q}");
            }
            None => {
                let _ = writeln!(out, "NODE {i}");
            }
        }
    }
    for e in g.edges() {
        let _ = write!(out, "EDGE {} {} {}", e.u, e.v, e.q);
        match e.gt_outlier {
            Some(true) => out.push_str(" 1\n"),
            Some(false) => out.push_str(" 0\n"),
            None => out.push('\n'),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{quat_dist, sample_uniform};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_graph() {
        let g = parse("VIEWGRAPH v1\n").unwrap();
        assert_eq!((g.n_nodes(), g.n_edges()), (0, 0));
        assert_eq!(parse(&serialize(&g)).unwrap(), g);
    }

    #[test]
    fn two_nodes_one_edge() {
        let text = "# sample\nVIEWGRAPH v1\nNODE 0\nNODE 1 1 0 0 0\nEDGE 0 1 0.8 0.0 0.6 0.0 1  # trailing\n";
        let g = parse(text).unwrap();
        assert_eq!(g.n_edges(), 1);
        let e = g.edge(0);
        assert_eq!(e.q.to_array(), [0.8, 0.0, 0.6, 0.0]);
        assert_eq!(e.gt_outlier, Some(true));
        assert_eq!(g.gt(0), None);
        assert_eq!(g.gt(1), Some(UnitQuaternion::IDENTITY));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let cases = [
            ("NODE 0\n", 1),
            ("VIEWGRAPH v1\nNODE 0\nNODE x\n", 3),
            ("VIEWGRAPH v1\nNODE 0\nNODE 0\n", 3),
            ("VIEWGRAPH v1\nNODE 0\nNODE 2\n", 3),
            ("VIEWGRAPH v1\nNODE 0\nNODE 1\nEDGE 0 1 1 0 0\n", 4),
            ("VIEWGRAPH v1\nNODE 0\nNODE 1\nEDGE 0 1 2 0 0 0\n", 4),
            ("VIEWGRAPH v1\nNODE 0\nNODE 1\nEDGE 0 1 1 0 0 0\nEDGE 1 0 1 0 0 0\n", 5),
            ("VIEWGRAPH v1\nNODE 0\nNODE 1\nEDGE 0 5 1 0 0 0\n", 4),
            ("VIEWGRAPH v1\nNODE 0\nNODE 1\nEDGE 0 1 1 0 0 0 2\n", 4),
            ("VIEWGRAPH v1\nBOGUS 1\n", 2),
        ];
        for (text, line) in cases {
            match parse(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn near_unit_quaternions_are_renormalised() {
        let g = parse("VIEWGRAPH v1\nNODE 0\nNODE 1\nEDGE 0 1 1.0000001 0 0 0\n").unwrap();
        assert_eq!(g.edge(0).q, UnitQuaternion::IDENTITY);
    }

    #[test]
    fn fuzz_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.random_range(0..25);
            let gt = (0..n)
                .map(|_| rng.random::<bool>().then(|| sample_uniform(&mut rng)))
                .collect();
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random::<f64>() < 0.3 {
                        let label = match rng.random_range(0..3) {
                            0 => None,
                            1 => Some(false),
                            _ => Some(true),
                        };
                        edges.push(Edge {
                            u,
                            v,
                            q: sample_uniform(&mut rng),
                            gt_outlier: label,
                        });
                    }
                }
            }
            let g = ViewGraph::new(gt, edges).unwrap();
            let back = parse(&serialize_with_comments(&g, &["round trip"])).unwrap();
            assert_eq!(back.n_nodes(), g.n_nodes());
            assert_eq!(back.n_edges(), g.n_edges());
            for (a, b) in g.gt_slice().iter().zip(back.gt_slice()) {
                match (a, b) {
                    (Some(a), Some(b)) => assert!(quat_dist(a, b) < 1e-9),
                    (None, None) => {}
                    _ => panic!("gt presence changed"),
                }
            }
            for (a, b) in g.edges().iter().zip(back.edges()) {
                assert_eq!((a.u, a.v, a.gt_outlier), (b.u, b.v, b.gt_outlier));
                assert!(quat_dist(&a.q, &b.q) < 1e-9);
            }
        }
    }
}
