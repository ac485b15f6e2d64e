//! Collaborative heterogeneous graph: user-item interactions, directed social
//! edges, and item-entity knowledge incidence, with dataset file ingestion.

pub mod split;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Result, SminError};
use crate::numerics::SparseMatrix;

/// Unified graph over users, items, and relation entities.
///
/// Interactions are binary (stored entries are 1). Social edges keep their
/// raw direction; symmetrization happens in the UU metapath builder.
/// Knowledge triples (h, r, t) are held as item-entity incidence: each
/// relation entity is an intermediate node linking the items incident to it.
#[derive(Clone, Debug)]
pub struct HeteroGraph {
    pub user_count: usize,
    pub item_count: usize,
    /// I x J binary interaction matrix X.
    pub interactions: SparseMatrix,
    /// Directed (source, target) user pairs, deduplicated, sorted.
    pub social_edges: Vec<(usize, usize)>,
    /// (item, relation entity) incidence pairs, deduplicated, sorted.
    pub item_relations: Vec<(usize, usize)>,
    pub relation_entity_count: usize,
}

impl HeteroGraph {
    pub fn interaction_count(&self) -> usize {
        self.interactions.nnz()
    }

    pub fn density(&self) -> f64 {
        if self.user_count == 0 || self.item_count == 0 {
            return 0.0;
        }
        self.interactions.nnz() as f64 / (self.user_count as f64 * self.item_count as f64)
    }

    /// Items interacted by `user`, ascending.
    pub fn user_items(&self, user: usize) -> &[usize] {
        self.interactions.row(user).0
    }

    /// Item x entity incidence matrix C.
    pub fn relation_incidence(&self) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.item_count,
            self.relation_entity_count,
            self.item_relations.iter().map(|&(i, e)| (i, e, 1.0)),
        )
        .expect("relation pairs validated at load")
    }

    /// Rebuilds the graph with a different interaction matrix (same sizes).
    pub fn with_interactions(&self, interactions: SparseMatrix) -> HeteroGraph {
        HeteroGraph {
            interactions,
            social_edges: self.social_edges.clone(),
            item_relations: self.item_relations.clone(),
            ..*self
        }
    }
}

/// Raw-token to contiguous-id assignments produced by the loader.
#[derive(Clone, Debug, Default)]
pub struct ReindexMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub entities: Vec<String>,
}

impl ReindexMaps {
    pub fn write_tsv(&self, dir: &Path) -> Result<()> {
        for (name, map) in [
            ("users.map.tsv", &self.users),
            ("items.map.tsv", &self.items),
            ("entities.map.tsv", &self.entities),
        ] {
            let mut f = File::create(dir.join(name))?;
            for (internal, raw) in map.iter().enumerate() {
                writeln!(f, "{raw}\t{internal}")?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Interactions with an explicit rating below this are dropped.
    pub rating_threshold: Option<f64>,
}

struct Interner {
    ids: HashMap<String, usize>,
    order: Vec<String>,
}

impl Interner {
    fn new() -> Self {
        Interner {
            ids: HashMap::new(),
            order: Vec::new(),
        }
    }

    fn intern(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.order.len();
        self.ids.insert(token.to_string(), id);
        self.order.push(token.to_string());
        id
    }
}

fn data_lines(path: &Path) -> Result<impl Iterator<Item = (usize, String)>> {
    let file = File::open(path).map_err(|e| SminError::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((idx + 1, trimmed.to_string()));
    }
    Ok(out.into_iter())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> SminError {
    SminError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Loads the three dataset files and reindexes raw ids to contiguous 0-based
/// internals (first-appearance order). Duplicate interaction pairs collapse to
/// one stored entry.
pub fn load_dataset(
    interactions_path: &Path,
    social_path: Option<&Path>,
    relations_path: Option<&Path>,
    opts: LoadOptions,
) -> Result<(HeteroGraph, ReindexMaps)> {
    let mut users = Interner::new();
    let mut items = Interner::new();
    let mut entities = Interner::new();

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (lineno, line) in data_lines(interactions_path)? {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 4 {
            return Err(parse_err(
                interactions_path,
                lineno,
                format!("expected 2-4 tab-separated fields, got {}", fields.len()),
            ));
        }
        if let Some(threshold) = opts.rating_threshold {
            if fields.len() >= 3 {
                let rating: f64 = fields[2].parse().map_err(|_| {
                    parse_err(interactions_path, lineno, format!("bad rating '{}'", fields[2]))
                })?;
                if rating < threshold {
                    continue;
                }
            }
        } else if fields.len() >= 3 && fields[2].parse::<f64>().is_err() {
            return Err(parse_err(
                interactions_path,
                lineno,
                format!("bad rating '{}'", fields[2]),
            ));
        }
        let u = users.intern(fields[0]);
        let v = items.intern(fields[1]);
        pairs.push((u, v));
    }
    if pairs.is_empty() {
        return Err(SminError::EmptyData(format!(
            "{} contains no interactions",
            interactions_path.display()
        )));
    }

    let mut social: Vec<(usize, usize)> = Vec::new();
    if let Some(path) = social_path {
        for (lineno, line) in data_lines(path)? {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected 2 tab-separated fields, got {}", fields.len()),
                ));
            }
            let a = users.intern(fields[0]);
            let b = users.intern(fields[1]);
            social.push((a, b));
        }
    }

    let mut relations: Vec<(usize, usize)> = Vec::new();
    if let Some(path) = relations_path {
        for (lineno, line) in data_lines(path)? {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected 2 tab-separated fields, got {}", fields.len()),
                ));
            }
            let i = items.intern(fields[0]);
            let e = entities.intern(fields[1]);
            relations.push((i, e));
        }
    }

    let user_count = users.order.len();
    let item_count = items.order.len();
    let interactions = SparseMatrix::from_triplets(
        user_count,
        item_count,
        // Duplicates would sum; binarize afterwards to keep X in {0,1}.
        pairs.iter().map(|&(u, v)| (u, v, 1.0)),
    )?
    .binarize();

    social.sort_unstable();
    social.dedup();
    relations.sort_unstable();
    relations.dedup();

    Ok((
        HeteroGraph {
            user_count,
            item_count,
            interactions,
            social_edges: social,
            item_relations: relations,
            relation_entity_count: entities.order.len(),
        },
        ReindexMaps {
            users: users.order,
            items: items.order,
            entities: entities.order,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_file(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn duplicate_pairs_collapse() {
        let dir = tempfile::tempdir().unwrap();
        let inter = write_file(dir.path(), "i.tsv", "u0\ti0\nu0\ti1\nu0\ti0\n");
        let (g, _) = load_dataset(&inter, None, None, LoadOptions::default()).unwrap();
        assert_eq!(g.interaction_count(), 2);
        assert!(g.interactions.is_binary());
    }

    #[test]
    fn relations_parse_to_incidence() {
        let dir = tempfile::tempdir().unwrap();
        let inter = write_file(dir.path(), "i.tsv", "u0\ti0\nu0\ti1\nu1\ti2\n");
        let rel = write_file(dir.path(), "r.tsv", "i0\tc0\ni1\tc0\ni2\tc1\n");
        let (g, maps) = load_dataset(&inter, None, Some(&rel), LoadOptions::default()).unwrap();
        assert_eq!(g.relation_entity_count, 2);
        assert_eq!(g.item_relations, vec![(0, 0), (1, 0), (2, 1)]);
        assert_eq!(maps.entities, vec!["c0", "c1"]);
    }

    #[test]
    fn empty_interactions_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let inter = write_file(dir.path(), "i.tsv", "# only a comment\n");
        let err = load_dataset(&inter, None, None, LoadOptions::default());
        assert!(matches!(err, Err(SminError::EmptyData(_))));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let inter = write_file(dir.path(), "i.tsv", "u0\ti0\nnot-enough-fields\n");
        let err = load_dataset(&inter, None, None, LoadOptions::default()).unwrap_err();
        match err {
            SminError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn rating_threshold_filters() {
        let dir = tempfile::tempdir().unwrap();
        let inter = write_file(dir.path(), "i.tsv", "u0\ti0\t5\nu0\ti1\t2\nu1\ti1\t4\n");
        let opts = LoadOptions {
            rating_threshold: Some(3.0),
        };
        let (g, _) = load_dataset(&inter, None, None, opts).unwrap();
        assert_eq!(g.interaction_count(), 2);
    }

    #[test]
    fn reload_reproduces_identical_graph() {
        let dir = tempfile::tempdir().unwrap();
        let inter = write_file(dir.path(), "i.tsv", "u9\ti3\nu2\ti3\nu9\ti7\n");
        let soc = write_file(dir.path(), "s.tsv", "u9\tu2\nu5\tu9\n");
        let (a, ma) = load_dataset(&inter, Some(&soc), None, LoadOptions::default()).unwrap();
        let (b, mb) = load_dataset(&inter, Some(&soc), None, LoadOptions::default()).unwrap();
        assert_eq!(a.interactions, b.interactions);
        assert_eq!(a.social_edges, b.social_edges);
        assert_eq!(ma.users, mb.users);
        // Reindexing is a bijection: no token maps to two ids.
        let mut sorted = ma.users.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), ma.users.len());
    }
}
