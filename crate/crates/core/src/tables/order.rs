//! Rooted-tree order conditions through order 4.

use super::{ArkTablePair, ButcherTable};

/// Which weight vector a residual was computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSet {
    Solution,
    Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderCondition {
    pub id: String,
    pub order: usize,
    pub weights: WeightSet,
    /// Absolute residual `|Φ(b) − 1/γ|`.
    pub residual: f64,
}

struct Tree {
    id: &'static str,
    children: Vec<Tree>,
}

fn leaf() -> Tree {
    Tree {
        id: "",
        children: vec![],
    }
}

fn node(children: Vec<Tree>) -> Tree {
    Tree { id: "", children }
}

impl Tree {
    fn size(&self) -> usize {
        1 + self.children.iter().map(Tree::size).sum::<usize>()
    }

    fn density(&self) -> f64 {
        self.size() as f64 * self.children.iter().map(Tree::density).product::<f64>()
    }

    /// Per-stage elementary weight; child edges consume `labels` in preorder.
    fn phi(&self, tabs: &[&ButcherTable], labels: &[usize], pos: &mut usize) -> Vec<f64> {
        let s = tabs[0].stages();
        let mut out = vec![1.0; s];
        for child in &self.children {
            let t = tabs[labels[*pos]];
            *pos += 1;
            let contrib: Vec<f64> = if child.children.is_empty() {
                t.c().to_vec()
            } else {
                let inner = child.phi(tabs, labels, pos);
                (0..s)
                    .map(|i| (0..s).map(|j| t.a(i, j) * inner[j]).sum())
                    .collect()
            };
            for (o, v) in out.iter_mut().zip(contrib) {
                *o *= v;
            }
        }
        out
    }
}

fn trees() -> Vec<Tree> {
    let named = |id, t: Tree| Tree { id, ..t };
    vec![
        named("1", node(vec![])),
        named("2", node(vec![leaf()])),
        named("3a", node(vec![leaf(), leaf()])),
        named("3b", node(vec![node(vec![leaf()])])),
        named("4a", node(vec![leaf(), leaf(), leaf()])),
        named("4b", node(vec![leaf(), node(vec![leaf()])])),
        named("4c", node(vec![node(vec![leaf(), leaf()])])),
        named("4d", node(vec![node(vec![node(vec![leaf()])])])),
    ]
}

fn residual(tree: &Tree, b: &[f64], tabs: &[&ButcherTable], labels: &[usize]) -> f64 {
    let mut pos = 0;
    let phi = tree.phi(tabs, labels, &mut pos);
    let sum: f64 = b.iter().zip(&phi).map(|(bi, p)| bi * p).sum();
    (sum - 1.0 / tree.density()).abs()
}

/// Residuals of the standard order conditions through `min(up_to, 4)`, for
/// `b` and, when present, for the embedding `b̃`.
pub fn order_condition_residuals(t: &ButcherTable, up_to: usize) -> Vec<OrderCondition> {
    let mut out = Vec::new();
    let mut weight_sets = vec![(WeightSet::Solution, t.b())];
    if let Some(e) = t.b_embed() {
        weight_sets.push((WeightSet::Embedding, e));
    }
    for (ws, b) in weight_sets {
        for tree in trees().iter().filter(|tr| tr.size() <= up_to.min(4)) {
            let labels = vec![0; tree.size()];
            out.push(OrderCondition {
                id: format!("order{}", tree.id),
                order: tree.size(),
                weights: ws,
                residual: residual(tree, b, &[t], &labels),
            });
        }
    }
    out
}

/// Residuals of the additive-method conditions through `min(up_to, 4)`:
/// every assignment of explicit/implicit coefficients to the vertices of each
/// tree. Ids carry the assignment in preorder, e.g. `order3b[EI]`.
pub fn ark_coupling_residuals(pair: &ArkTablePair, up_to: usize) -> Vec<OrderCondition> {
    let tabs = [pair.explicit(), pair.implicit()];
    let mut out = Vec::new();
    for (ws, pick) in [(WeightSet::Solution, false), (WeightSet::Embedding, true)] {
        for tree in trees().iter().filter(|tr| tr.size() <= up_to.min(4)) {
            let n = tree.size();
            for mask in 0..(1usize << n) {
                let labels: Vec<usize> = (0..n).map(|k| (mask >> k) & 1).collect();
                let root = tabs[labels[0]];
                let b = if pick {
                    match root.b_embed() {
                        Some(e) => e,
                        None => continue,
                    }
                } else {
                    root.b()
                };
                let tag: String = labels
                    .iter()
                    .map(|&l| if l == 0 { 'E' } else { 'I' })
                    .collect();
                out.push(OrderCondition {
                    id: format!("order{}[{}]", tree.id, tag),
                    order: n,
                    weights: ws,
                    residual: residual(tree, b, &tabs, &labels[1..]),
                });
            }
        }
    }
    out
}
