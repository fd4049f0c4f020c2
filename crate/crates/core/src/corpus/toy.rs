//! A small head-marked PCFG used as a desk-scale stand-in for a treebank.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GoldSentence, LabeledSpan};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Nt {
    S,
    Cs,
    Np,
    Nb,
    Vp,
    Pp,
    Sbar,
}

impl Nt {
    fn label(self) -> &'static str {
        match self {
            Nt::S => "S",
            Nt::Cs => "CS",
            Nt::Np => "NP",
            Nt::Nb => "NBAR",
            Nt::Vp => "VP",
            Nt::Pp => "PP",
            Nt::Sbar => "SBAR",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Class {
    Det,
    N,
    Adj,
    Name,
    Pron,
    Vt,
    Vi,
    Vs,
    Mod,
    P,
    Adv,
    Comp,
    Conj,
}

#[derive(Clone, Copy, Debug)]
enum Sym {
    Nt(Nt),
    Word(Class),
}

/// `lhs -> rhs` with the head child marked; single-symbol rules emit a word.
struct Rule {
    lhs: Nt,
    rhs: &'static [Sym],
    head: usize,
    weight: f64,
}

use Class::*;
use Sym::{Nt as N_, Word as W};

const RULES: &[Rule] = &[
    Rule {
        lhs: Nt::S,
        rhs: &[N_(Nt::Np), N_(Nt::Vp)],
        head: 1,
        weight: 0.83,
    },
    Rule {
        lhs: Nt::S,
        rhs: &[W(Adv), N_(Nt::S)],
        head: 1,
        weight: 0.07,
    },
    Rule {
        lhs: Nt::S,
        rhs: &[N_(Nt::S), N_(Nt::Cs)],
        head: 0,
        weight: 0.10,
    },
    Rule {
        lhs: Nt::Cs,
        rhs: &[W(Conj), N_(Nt::S)],
        head: 1,
        weight: 1.0,
    },
    Rule {
        lhs: Nt::Np,
        rhs: &[W(Det), N_(Nt::Nb)],
        head: 1,
        weight: 0.45,
    },
    Rule {
        lhs: Nt::Np,
        rhs: &[N_(Nt::Np), N_(Nt::Pp)],
        head: 0,
        weight: 0.12,
    },
    Rule {
        lhs: Nt::Np,
        rhs: &[W(Pron)],
        head: 0,
        weight: 0.18,
    },
    Rule {
        lhs: Nt::Np,
        rhs: &[W(Name)],
        head: 0,
        weight: 0.15,
    },
    Rule {
        lhs: Nt::Np,
        rhs: &[N_(Nt::Nb)],
        head: 0,
        weight: 0.10,
    },
    Rule {
        lhs: Nt::Nb,
        rhs: &[W(Adj), N_(Nt::Nb)],
        head: 1,
        weight: 0.25,
    },
    Rule {
        lhs: Nt::Nb,
        rhs: &[W(N)],
        head: 0,
        weight: 0.75,
    },
    Rule {
        lhs: Nt::Vp,
        rhs: &[W(Vt), N_(Nt::Np)],
        head: 0,
        weight: 0.40,
    },
    Rule {
        lhs: Nt::Vp,
        rhs: &[W(Vi)],
        head: 0,
        weight: 0.18,
    },
    Rule {
        lhs: Nt::Vp,
        rhs: &[N_(Nt::Vp), N_(Nt::Pp)],
        head: 0,
        weight: 0.14,
    },
    Rule {
        lhs: Nt::Vp,
        rhs: &[W(Vs), N_(Nt::Sbar)],
        head: 0,
        weight: 0.08,
    },
    Rule {
        lhs: Nt::Vp,
        rhs: &[N_(Nt::Vp), W(Adv)],
        head: 0,
        weight: 0.10,
    },
    Rule {
        lhs: Nt::Vp,
        rhs: &[W(Mod), N_(Nt::Vp)],
        head: 1,
        weight: 0.10,
    },
    Rule {
        lhs: Nt::Pp,
        rhs: &[W(P), N_(Nt::Np)],
        head: 0,
        weight: 1.0,
    },
    Rule {
        lhs: Nt::Sbar,
        rhs: &[W(Comp), N_(Nt::S)],
        head: 1,
        weight: 1.0,
    },
];

fn words(class: Class) -> &'static [&'static str] {
    match class {
        Det => &["the", "a", "every", "some", "this", "no"],
        N => &[
            "dog", "cat", "bird", "child", "teacher", "farmer", "house", "garden", "river", "book", "letter", "song", "city", "forest",
            "window", "friend", "doctor", "horse", "table", "story", "king", "boat",
        ],
        Adj => &[
            "big", "small", "old", "young", "red", "happy", "quiet", "strange", "green", "tall", "clever", "lazy",
        ],
        Name => &["alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi"],
        Pron => &["she", "he", "they", "it", "we", "you"],
        Vt => &[
            "sees", "likes", "finds", "reads", "writes", "follows", "helps", "paints", "visits", "carries", "hears", "builds",
        ],
        Vi => &["sleeps", "runs", "sings", "laughs", "waits", "swims", "falls", "smiles"],
        Vs => &["thinks", "says", "knows", "believes", "hopes"],
        Mod => &["will", "can", "must", "may"],
        P => &["in", "on", "near", "with", "under", "behind", "across", "beside"],
        Adv => &["quickly", "slowly", "often", "today", "again", "quietly"],
        Comp => &["that"],
        Conj => &["and", "but"],
    }
}

/// Inclusive length bounds of generated sentences.
pub const MIN_LEN: usize = 4;
pub const MAX_LEN: usize = 20;
const MAX_DEPTH: usize = 14;

/// Sampler state: rule choices per nonterminal and Zipf word choices per class.
pub struct ToyGrammar {
    by_lhs: Vec<(Nt, Vec<&'static Rule>, WeightedIndex<f64>)>,
}

impl Default for ToyGrammar {
    fn default() -> Self {
        let lhs = [Nt::S, Nt::Cs, Nt::Np, Nt::Nb, Nt::Vp, Nt::Pp, Nt::Sbar];
        let by_lhs = lhs
            .into_iter()
            .map(|nt| {
                let rules: Vec<&Rule> = RULES.iter().filter(|r| r.lhs == nt).collect();
                let dist = WeightedIndex::new(rules.iter().map(|r| r.weight)).expect("positive weights");
                (nt, rules, dist)
            })
            .collect();
        ToyGrammar { by_lhs }
    }
}

struct Derivation {
    words: Vec<&'static str>,
    heads: Vec<Option<usize>>,
    spans: Vec<LabeledSpan>,
}

impl ToyGrammar {
    pub fn rule_count() -> usize {
        RULES.len()
    }

    /// Every terminal the grammar can emit.
    pub fn vocabulary() -> Vec<&'static str> {
        [Det, N, Adj, Name, Pron, Vt, Vi, Vs, Mod, P, Adv, Comp, Conj]
            .into_iter()
            .flat_map(|c| words(c).iter().copied())
            .collect()
    }

    fn word(class: Class, rng: &mut impl Rng) -> &'static str {
        let list = words(class);
        let zipf = WeightedIndex::new((0..list.len()).map(|r| 1.0 / (r as f64 + 1.0))).expect("nonempty");
        list[zipf.sample(rng)]
    }

    /// Expands `sym`, returning the index of its lexical head, or `None`
    /// when the derivation grew past the limits.
    fn expand(&self, sym: Sym, depth: usize, d: &mut Derivation, rng: &mut impl Rng) -> Option<usize> {
        if depth > MAX_DEPTH || d.words.len() > MAX_LEN {
            return None;
        }
        let nt = match sym {
            Sym::Word(c) => {
                d.words.push(Self::word(c, rng));
                d.heads.push(None);
                return Some(d.words.len() - 1);
            }
            Sym::Nt(nt) => nt,
        };
        let (_, rules, dist) = self.by_lhs.iter().find(|(n, _, _)| *n == nt).expect("every nonterminal has rules");
        let rule = rules[dist.sample(rng)];
        let start = d.words.len();
        let mut child_heads = Vec::with_capacity(rule.rhs.len());
        for &s in rule.rhs {
            child_heads.push(self.expand(s, depth + 1, d, rng)?);
        }
        let head = child_heads[rule.head];
        for (k, &h) in child_heads.iter().enumerate() {
            if k != rule.head {
                d.heads[h] = Some(head);
            }
        }
        let end = d.words.len() - 1;
        if end > start {
            d.spans.push(LabeledSpan {
                start,
                end,
                label: nt.label().to_string(),
            });
        }
        Some(head)
    }

    /// One sentence with `MIN_LEN..=MAX_LEN` tokens.
    pub fn sample(&self, rng: &mut impl Rng) -> GoldSentence {
        loop {
            let mut d = Derivation {
                words: Vec::new(),
                heads: Vec::new(),
                spans: Vec::new(),
            };
            if self.expand(Sym::Nt(Nt::S), 0, &mut d, rng).is_none() {
                continue;
            }
            if !(MIN_LEN..=MAX_LEN).contains(&d.words.len()) {
                continue;
            }
            d.spans.sort();
            let n = d.words.len();
            return GoldSentence {
                tokens: d.words.into_iter().map(String::from).collect(),
                tags: None,
                punct: vec![false; n],
                spans: Some(d.spans),
                heads: Some(d.heads),
            };
        }
    }
}

/// `size` sentences drawn from the built-in grammar; deterministic in `seed`.
/// Trees are binary and heads are percolated through the marked head children.
pub fn toy_grammar_generate(seed: u64, size: usize) -> Vec<GoldSentence> {
    let grammar = ToyGrammar::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size).map(|_| grammar.sample(&mut rng)).collect()
}
