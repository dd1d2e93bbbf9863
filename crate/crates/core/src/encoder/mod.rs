//! The pair scorer `F(p, h)`.
//!
//! Pairs are laid out as `[CLS] p [SEP] h [SEP]`. The score is a one-hidden
//! layer network over three mean-pooled views of the token embeddings:
//!
//! ```text
//! feature = [mean(all) ; mean(premise span) ; mean(hypothesis span)]   (3d)
//! hidden  = tanh(feature · W1 + b1)                                     (d_h)
//! score   = hidden · w2 + b2
//! ```
//!
//! Pooling sums left to right over positions so scores are bitwise
//! reproducible within one build.

mod model;
mod vocab;

pub use model::{EncoderDims, EncoderParams, Forward};
pub use vocab::{normalize, Vocab, CLS, PAD, RESERVED, SEP, UNK};

use std::ops::Range;

/// Token ids of one `(premise, hypothesis)` pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairTokens {
    pub ids: Vec<u32>,
    pub premise_span: Range<usize>,
    pub hypothesis_span: Range<usize>,
}

impl PairTokens {
    /// True when either text normalized to zero tokens.
    pub fn has_empty_span(&self) -> bool {
        self.premise_span.is_empty() || self.hypothesis_span.is_empty()
    }
}

pub fn tokenize_pair(premise: &str, hypothesis: &str, vocab: &Vocab) -> PairTokens {
    let p = vocab.encode(premise);
    let h = vocab.encode(hypothesis);
    let mut ids = Vec::with_capacity(p.len() + h.len() + 3);
    ids.push(CLS);
    ids.extend_from_slice(&p);
    ids.push(SEP);
    ids.extend_from_slice(&h);
    ids.push(SEP);
    let premise_span = 1..1 + p.len();
    let hypothesis_span = p.len() + 2..p.len() + 2 + h.len();
    PairTokens { ids, premise_span, hypothesis_span }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(&["i stopped . i halted ."], 1).unwrap()
    }

    #[test]
    fn layout_matches_cls_p_sep_h_sep() {
        let v = vocab();
        let t = tokenize_pair("I stopped.", "I halted.", &v);
        let expect: Vec<u32> =
            vec![CLS, v.id("i"), v.id("stopped"), v.id("."), SEP, v.id("i"), v.id("halted"), v.id("."), SEP];
        assert_eq!(t.ids, expect);
        assert_eq!(t.premise_span, 1..4);
        assert_eq!(t.hypothesis_span, 5..8);
        assert_eq!(t.ids.iter().filter(|&&i| i == SEP).count(), 2);
    }

    #[test]
    fn oov_hypothesis_is_all_unk() {
        let t = tokenize_pair("I stopped.", "zebra quokka", &vocab());
        assert!(t.ids[t.hypothesis_span.clone()].iter().all(|&i| i == UNK));
        assert_eq!(t.hypothesis_span.len(), 2);
    }

    #[test]
    fn swapping_texts_changes_spans() {
        let v = vocab();
        let a = tokenize_pair("I stopped.", "halted", &v);
        let b = tokenize_pair("halted", "I stopped.", &v);
        assert_ne!(a.premise_span, b.premise_span);
        assert_ne!(a.ids, b.ids);
    }

    #[test]
    fn empty_text_gives_empty_span() {
        let t = tokenize_pair("stop", "", &vocab());
        assert!(t.has_empty_span());
        assert_eq!(t.ids.last(), Some(&SEP));
    }
}
