//! Languages and the supervised / zero-shot structure between them.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Dense language index `0..k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Lang(pub usize);

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Ordered translation direction `(src, tgt)`.
pub type Edge = (Lang, Lang);

/// Languages as nodes; supervised edges carry parallel data, zero-shot
/// edges are every other ordered pair. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranslationGraph {
    names: Vec<String>,
    supervised: BTreeSet<Edge>,
    zero_shot: BTreeSet<Edge>,
}

impl TranslationGraph {
    /// Builds the graph from unordered supervised pairs; each pair yields
    /// both directions and zero-shot edges are the complement.
    pub fn new<S: AsRef<str>>(names: &[S], supervised_pairs: &[(usize, usize)]) -> Result<Self> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        let k = names.len();
        if k < 2 {
            return Err(invalid("a translation graph needs at least two languages"));
        }
        let unique: BTreeSet<&str> = names.iter().map(String::as_str).collect();
        if unique.len() != k {
            return Err(invalid("language names must be unique"));
        }
        if let Some(bad) = names.iter().find(|n| n.is_empty() || !n.is_ascii() || n.contains(char::is_whitespace)) {
            return Err(invalid(format!("language name `{bad}` must be non-empty ASCII without whitespace")));
        }
        let mut supervised = BTreeSet::new();
        for &(a, b) in supervised_pairs {
            for x in [a, b] {
                if x >= k {
                    return Err(Error::UnknownLanguage(format!("#{x}")));
                }
            }
            if a == b {
                return Err(invalid(format!("self-pair on language `{}`", names[a])));
            }
            supervised.insert((Lang(a), Lang(b)));
            supervised.insert((Lang(b), Lang(a)));
        }
        let zero_shot = (0..k)
            .flat_map(|a| (0..k).map(move |b| (Lang(a), Lang(b))))
            .filter(|(a, b)| a != b && !supervised.contains(&(*a, *b)))
            .collect();
        Ok(Self { names, supervised, zero_shot })
    }

    /// Same as [`TranslationGraph::new`] with pairs given by name.
    pub fn from_names<S: AsRef<str>>(names: &[S], pairs: &[(S, S)]) -> Result<Self> {
        let lookup = |n: &str| {
            names.iter().position(|x| x.as_ref() == n).ok_or_else(|| Error::UnknownLanguage(n.to_string()))
        };
        let idx = pairs
            .iter()
            .map(|(a, b)| Ok((lookup(a.as_ref())?, lookup(b.as_ref())?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(names, &idx)
    }

    /// `k` languages with `names[0]` as a hub supervised with every other.
    pub fn hub<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let pairs: Vec<_> = (1..names.len()).map(|i| (0, i)).collect();
        Self::new(names, &pairs)
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn languages(&self) -> impl Iterator<Item = Lang> {
        (0..self.k()).map(Lang)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, l: Lang) -> &str {
        &self.names[l.0]
    }

    pub fn lang(&self, name: &str) -> Result<Lang> {
        self.names.iter().position(|n| n == name).map(Lang).ok_or_else(|| Error::UnknownLanguage(name.into()))
    }

    pub fn supervised(&self) -> &BTreeSet<Edge> {
        &self.supervised
    }

    pub fn zero_shot(&self) -> &BTreeSet<Edge> {
        &self.zero_shot
    }

    pub fn is_supervised(&self, src: Lang, tgt: Lang) -> bool {
        self.supervised.contains(&(src, tgt))
    }

    /// Supervised pairs as `(a, b)` with `a < b`, in ascending order.
    pub fn supervised_pairs(&self) -> Vec<Edge> {
        self.supervised.iter().copied().filter(|(a, b)| a < b).collect()
    }

    /// Every ordered pair of distinct languages.
    pub fn directions(&self) -> Vec<Edge> {
        let k = self.k();
        (0..k).flat_map(|a| (0..k).filter(move |&b| b != a).map(move |b| (Lang(a), Lang(b)))).collect()
    }

    pub fn edge_label(&self, (s, t): Edge) -> String {
        format!("{}-{}", self.name(s), self.name(t))
    }

    fn neighbours(&self, l: Lang) -> impl Iterator<Item = Lang> + '_ {
        self.supervised.range((l, Lang(0))..=(l, Lang(usize::MAX))).map(|&(_, b)| b)
    }

    /// Whether supervised edges connect all languages.
    pub fn is_spanning(&self) -> bool {
        let mut seen = vec![false; self.k()];
        let mut stack = vec![Lang(0)];
        seen[0] = true;
        while let Some(l) = stack.pop() {
            for n in self.neighbours(l) {
                if !seen[n.0] {
                    seen[n.0] = true;
                    stack.push(n);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Shortest supervised path `src -> ... -> tgt`; among equally short
    /// paths the one with the smallest intermediate ids (lexicographic).
    pub fn pivot_path(&self, src: Lang, tgt: Lang) -> Result<Vec<Lang>> {
        if src.0 >= self.k() || tgt.0 >= self.k() {
            return Err(Error::UnknownLanguage(format!("{}", if src.0 >= self.k() { src } else { tgt })));
        }
        if src == tgt {
            return Err(invalid("pivot path needs distinct source and target"));
        }
        // distances to tgt; edges are symmetric
        let mut dist = vec![usize::MAX; self.k()];
        dist[tgt.0] = 0;
        let mut queue = VecDeque::from([tgt]);
        while let Some(l) = queue.pop_front() {
            for n in self.neighbours(l) {
                if dist[n.0] == usize::MAX {
                    dist[n.0] = dist[l.0] + 1;
                    queue.push_back(n);
                }
            }
        }
        if dist[src.0] == usize::MAX {
            return Err(Error::NoPath { src: self.name(src).into(), tgt: self.name(tgt).into() });
        }
        let mut path = vec![src];
        let mut cur = src;
        while cur != tgt {
            cur = self
                .neighbours(cur)
                .find(|n| dist[n.0] + 1 == dist[cur.0])
                .expect("BFS distances are consistent");
            path.push(cur);
        }
        Ok(path)
    }
}
