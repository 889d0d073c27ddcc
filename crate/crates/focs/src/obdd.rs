//! Reduced ordered binary decision diagrams with a shared node table.
//!
//! A builder owns the node store, the unique table (which enforces
//! reduction) and the apply cache for one compilation session. Finished
//! diagrams are plain [`BddId`] handles into the builder; evaluation, model
//! counting and export are pure reads.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObddError {
    #[error("node budget of {budget} unique nodes exceeded")]
    NodeBudget { budget: usize },
    #[error("variable {var} out of range for {num_vars} variables")]
    BadVariable { var: usize, num_vars: usize },
}

/// Handle into a builder's node table. Ids 0 and 1 are the terminal sinks.
pub type BddId = u32;

pub const BDD_FALSE: BddId = 0;
pub const BDD_TRUE: BddId = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Node {
    var: u32,
    lo: BddId,
    hi: BddId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Op {
    And,
    Or,
    Xor,
}

const DEFAULT_NODE_BUDGET: usize = 10_000_000;

/// Shared-table OBDD builder for one compilation session.
pub struct ObddBuilder {
    num_vars: usize,
    /// Level of each variable in the global order; paths visit variables in
    /// increasing level.
    level_of: Vec<u32>,
    nodes: Vec<Node>,
    unique: HashMap<Node, BddId>,
    apply_cache: HashMap<(Op, BddId, BddId), BddId>,
    budget: usize,
}

impl ObddBuilder {
    /// Builder over `num_vars` variables in identity order.
    pub fn new(num_vars: usize) -> Self {
        Self::with_order((0..num_vars as u32).collect())
    }

    /// Builder with an explicit variable order: `order[level] = var`.
    pub fn with_order(order: Vec<u32>) -> Self {
        let num_vars = order.len();
        let mut level_of = vec![0u32; num_vars];
        for (level, &var) in order.iter().enumerate() {
            level_of[var as usize] = level as u32;
        }
        ObddBuilder {
            num_vars,
            level_of,
            // Sentinel terminals at ids 0 and 1; their var is one past the
            // deepest level so every real node sits above them.
            nodes: vec![
                Node {
                    var: u32::MAX,
                    lo: 0,
                    hi: 0,
                },
                Node {
                    var: u32::MAX,
                    lo: 1,
                    hi: 1,
                },
            ],
            unique: HashMap::new(),
            apply_cache: HashMap::new(),
            budget: DEFAULT_NODE_BUDGET,
        }
    }

    pub fn set_node_budget(&mut self, budget: usize) {
        self.budget = budget;
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// Variable order as `order[level] = var`.
    pub fn order(&self) -> Vec<u32> {
        let mut order = vec![0u32; self.num_vars];
        for (var, &level) in self.level_of.iter().enumerate() {
            order[level as usize] = var as u32;
        }
        order
    }

    fn level(&self, id: BddId) -> u32 {
        let var = self.nodes[id as usize].var;
        if var == u32::MAX {
            u32::MAX
        } else {
            self.level_of[var as usize]
        }
    }

    /// Reduction happens here: redundant tests collapse and structurally
    /// equal nodes share one id via the unique table.
    pub fn mk(&mut self, var: usize, lo: BddId, hi: BddId) -> Result<BddId, ObddError> {
        if var >= self.num_vars {
            return Err(ObddError::BadVariable {
                var,
                num_vars: self.num_vars,
            });
        }
        if lo == hi {
            return Ok(lo);
        }
        let node = Node {
            var: var as u32,
            lo,
            hi,
        };
        if let Some(&id) = self.unique.get(&node) {
            return Ok(id);
        }
        if self.nodes.len() - 2 >= self.budget {
            return Err(ObddError::NodeBudget {
                budget: self.budget,
            });
        }
        let id = self.nodes.len() as BddId;
        self.nodes.push(node);
        self.unique.insert(node, id);
        Ok(id)
    }

    pub fn terminal(&self, value: bool) -> BddId {
        if value {
            BDD_TRUE
        } else {
            BDD_FALSE
        }
    }

    /// Single-variable function.
    pub fn var(&mut self, var: usize) -> Result<BddId, ObddError> {
        self.mk(var, BDD_FALSE, BDD_TRUE)
    }

    fn apply(&mut self, op: Op, a: BddId, b: BddId) -> Result<BddId, ObddError> {
        // Terminal rules.
        match op {
            Op::And => {
                if a == BDD_FALSE || b == BDD_FALSE {
                    return Ok(BDD_FALSE);
                }
                if a == BDD_TRUE {
                    return Ok(b);
                }
                if b == BDD_TRUE || a == b {
                    return Ok(a);
                }
            }
            Op::Or => {
                if a == BDD_TRUE || b == BDD_TRUE {
                    return Ok(BDD_TRUE);
                }
                if a == BDD_FALSE {
                    return Ok(b);
                }
                if b == BDD_FALSE || a == b {
                    return Ok(a);
                }
            }
            Op::Xor => {
                if a == b {
                    return Ok(BDD_FALSE);
                }
                if a == BDD_FALSE {
                    return Ok(b);
                }
                if b == BDD_FALSE {
                    return Ok(a);
                }
            }
        }
        // Commutative ops: normalize the cache key.
        let key = if a <= b { (op, a, b) } else { (op, b, a) };
        if let Some(&r) = self.apply_cache.get(&key) {
            return Ok(r);
        }
        let (la, lb) = (self.level(a), self.level(b));
        let top = la.min(lb);
        let var = if la == top {
            self.nodes[a as usize].var
        } else {
            self.nodes[b as usize].var
        };
        let (a_lo, a_hi) = if la == top {
            (self.nodes[a as usize].lo, self.nodes[a as usize].hi)
        } else {
            (a, a)
        };
        let (b_lo, b_hi) = if lb == top {
            (self.nodes[b as usize].lo, self.nodes[b as usize].hi)
        } else {
            (b, b)
        };
        let lo = self.apply(op, a_lo, b_lo)?;
        let hi = self.apply(op, a_hi, b_hi)?;
        let r = self.mk(var as usize, lo, hi)?;
        self.apply_cache.insert(key, r);
        Ok(r)
    }

    pub fn and(&mut self, a: BddId, b: BddId) -> Result<BddId, ObddError> {
        self.apply(Op::And, a, b)
    }

    pub fn or(&mut self, a: BddId, b: BddId) -> Result<BddId, ObddError> {
        self.apply(Op::Or, a, b)
    }

    pub fn xor(&mut self, a: BddId, b: BddId) -> Result<BddId, ObddError> {
        self.apply(Op::Xor, a, b)
    }

    pub fn not(&mut self, a: BddId) -> Result<BddId, ObddError> {
        self.apply(Op::Xor, a, BDD_TRUE)
    }

    pub fn ite(&mut self, f: BddId, g: BddId, h: BddId) -> Result<BddId, ObddError> {
        let fg = self.and(f, g)?;
        let nf = self.not(f)?;
        let nfh = self.and(nf, h)?;
        self.or(fg, nfh)
    }

    /// Cofactor: fixes one variable to a constant.
    pub fn restrict(&mut self, f: BddId, var: usize, value: u8) -> Result<BddId, ObddError> {
        let mut memo = HashMap::new();
        self.restrict_rec(f, var as u32, value, &mut memo)
    }

    fn restrict_rec(
        &mut self,
        f: BddId,
        var: u32,
        value: u8,
        memo: &mut HashMap<BddId, BddId>,
    ) -> Result<BddId, ObddError> {
        if f <= BDD_TRUE {
            return Ok(f);
        }
        if let Some(&r) = memo.get(&f) {
            return Ok(r);
        }
        let node = self.nodes[f as usize];
        let r = if node.var == var {
            if value == 1 {
                node.hi
            } else {
                node.lo
            }
        } else if self.level_of[node.var as usize] > self.level_of[var as usize] {
            // Past the variable in the order: it cannot appear below.
            f
        } else {
            let lo = self.restrict_rec(node.lo, var, value, memo)?;
            let hi = self.restrict_rec(node.hi, var, value, memo)?;
            self.mk(node.var as usize, lo, hi)?
        };
        memo.insert(f, r);
        Ok(r)
    }

    /// Substitutes `g` for variable `var` in `f`.
    pub fn compose(&mut self, f: BddId, var: usize, g: BddId) -> Result<BddId, ObddError> {
        let f1 = self.restrict(f, var, 1)?;
        let f0 = self.restrict(f, var, 0)?;
        self.ite(g, f1, f0)
    }

    /// Evaluates the function on a complete assignment indexed by variable.
    pub fn eval(&self, f: BddId, assignment: &[u8]) -> bool {
        let mut id = f;
        while id > BDD_TRUE {
            let node = self.nodes[id as usize];
            id = if assignment[node.var as usize] == 1 {
                node.hi
            } else {
                node.lo
            };
        }
        id == BDD_TRUE
    }

    /// Weighted model count: the total mass of satisfying assignments under
    /// a fully factorized prior (`prior[var]` = probability the variable is
    /// 1). Variables skipped along an edge sum out to a factor of 1.
    pub fn wmc(&self, f: BddId, prior: &[f64]) -> f64 {
        let mut memo: HashMap<BddId, f64> = HashMap::new();
        self.wmc_rec(f, prior, &mut memo)
    }

    fn wmc_rec(&self, f: BddId, prior: &[f64], memo: &mut HashMap<BddId, f64>) -> f64 {
        if f == BDD_FALSE {
            return 0.0;
        }
        if f == BDD_TRUE {
            return 1.0;
        }
        if let Some(&v) = memo.get(&f) {
            return v;
        }
        let node = self.nodes[f as usize];
        let p = prior[node.var as usize];
        let v = (1.0 - p) * self.wmc_rec(node.lo, prior, memo)
            + p * self.wmc_rec(node.hi, prior, memo);
        memo.insert(f, v);
        v
    }

    /// Number of satisfying assignments over `vars` variables.
    pub fn model_count(&self, f: BddId, vars: usize) -> f64 {
        self.wmc(f, &vec![0.5; self.num_vars]) * (1u64 << vars) as f64
    }

    /// Internal (non-terminal) nodes reachable from the root.
    pub fn node_count(&self, f: BddId) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![f];
        while let Some(id) = stack.pop() {
            if id <= BDD_TRUE || !seen.insert(id) {
                continue;
            }
            let node = self.nodes[id as usize];
            stack.push(node.lo);
            stack.push(node.hi);
        }
        seen.len()
    }

    /// Graphviz rendering of one or more roots sharing the node table.
    pub fn to_dot(&self, roots: &[(&str, BddId)], var_names: &[String]) -> String {
        let mut out = String::from("digraph obdd {\n");
        out.push_str("  f [shape=box,label=\"0\"];\n  t [shape=box,label=\"1\"];\n");
        let mut seen = std::collections::HashSet::new();
        let mut stack: Vec<BddId> = roots.iter().map(|&(_, id)| id).collect();
        while let Some(id) = stack.pop() {
            if id <= BDD_TRUE || !seen.insert(id) {
                continue;
            }
            let node = self.nodes[id as usize];
            let label = var_names
                .get(node.var as usize)
                .cloned()
                .unwrap_or_else(|| format!("v{}", node.var));
            writeln!(out, "  n{id} [label=\"{label}\"];").unwrap();
            for (child, style) in [(node.lo, "dashed"), (node.hi, "solid")] {
                let target = match child {
                    BDD_FALSE => "f".to_string(),
                    BDD_TRUE => "t".to_string(),
                    other => format!("n{other}"),
                };
                writeln!(out, "  n{id} -> {target} [style={style}];").unwrap();
            }
            stack.push(node.lo);
            stack.push(node.hi);
        }
        for (name, id) in roots {
            let target = match *id {
                BDD_FALSE => "f".to_string(),
                BDD_TRUE => "t".to_string(),
                other => format!("n{other}"),
            };
            writeln!(out, "  root_{name} [shape=plaintext,label=\"{name}\"];").unwrap();
            writeln!(out, "  root_{name} -> {target};").unwrap();
        }
        out.push_str("}\n");
        out
    }
}
