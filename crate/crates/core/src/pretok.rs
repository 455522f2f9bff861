//! GPT-2-style pre-tokenization.
//!
//! Splits text into pretokens before BPE: contraction suffixes, letter runs,
//! number runs and punctuation runs, each optionally carrying one leading
//! space, plus standalone whitespace runs. Merges learned and applied by the
//! tokenizer never cross pretoken boundaries, which is what keeps fertility
//! (tokens per whitespace word) at or above 1.0.
//!
//! The scanner is equivalent to the alternation
//!
//! ```text
//! 's|'t|'re|'ve|'m|'ll|'d| ?L+| ?N+| ?P+|\s+(?!\S)|\s+
//! ```
//!
//! where `L` is Unicode `Alphabetic`, `N` is `\p{N}` and `P` is everything
//! that is neither of those nor whitespace. It is hand-rolled so the hot
//! path needs no regex engine and no lookahead support.

/// Identifier stored in vocab files for this pattern.
pub const PRETOKENIZER_ID: &str = "gpt2";

const CONTRACTIONS: [&str; 7] = ["'s", "'t", "'re", "'ve", "'m", "'ll", "'d"];

#[derive(Clone, Copy, PartialEq)]
enum Class {
    Letter,
    Number,
    Punct,
}

fn classify(c: char) -> Class {
    if c.is_alphabetic() {
        Class::Letter
    } else if c.is_numeric() {
        Class::Number
    } else {
        Class::Punct
    }
}

/// Iterator over pretoken slices of `text`, in order, covering every byte.
pub fn pretokenize(text: &str) -> Pretokens<'_> {
    Pretokens { text, pos: 0 }
}

pub struct Pretokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Pretokens<'a> {
    /// End (byte offset) of the run of `class` characters starting at `from`.
    fn run_end(&self, from: usize, class: Class) -> usize {
        let mut end = from;
        for c in self.text[from..].chars() {
            if c.is_whitespace() || classify(c) != class {
                break;
            }
            end += c.len_utf8();
        }
        end
    }

    fn contraction_at(&self, at: usize) -> Option<usize> {
        let rest = &self.text[at..];
        CONTRACTIONS
            .iter()
            .find(|suf| rest.starts_with(**suf))
            .map(|suf| at + suf.len())
    }
}

impl<'a> Iterator for Pretokens<'a> {
    type Item = &'a str;

    fn next(&mut self) -> Option<&'a str> {
        let start = self.pos;
        let rest = &self.text[start..];
        let first = rest.chars().next()?;

        if first.is_whitespace() {
            // maximal whitespace run
            let mut run_end = start;
            let mut last_len = 0;
            for c in rest.chars() {
                if !c.is_whitespace() {
                    break;
                }
                last_len = c.len_utf8();
                run_end += last_len;
            }
            if run_end == self.text.len() {
                // trailing whitespace: one token
                self.pos = run_end;
                return Some(&self.text[start..run_end]);
            }
            let last_start = run_end - last_len;
            if last_start > start {
                // all but the final whitespace char form their own token
                self.pos = last_start;
                return Some(&self.text[start..last_start]);
            }
            // single whitespace char followed by non-whitespace
            if first == ' ' {
                // leading-space attachment to the following run
                let next = self.text[run_end..].chars().next().expect("non-ws follows");
                let end = self.run_end(run_end, classify(next));
                self.pos = end;
                return Some(&self.text[start..end]);
            }
            self.pos = run_end;
            return Some(&self.text[start..run_end]);
        }

        if first == '\'' {
            if let Some(end) = self.contraction_at(start) {
                self.pos = end;
                return Some(&self.text[start..end]);
            }
        }

        let end = self.run_end(start, classify(first));
        self.pos = end;
        Some(&self.text[start..end])
    }
}

/// Count of whitespace-delimited words (maximal non-whitespace runs).
pub fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        pretokenize(s).collect()
    }

    #[test]
    fn empty_and_simple() {
        assert!(toks("").is_empty());
        assert_eq!(toks("hello"), vec!["hello"]);
        assert_eq!(toks("hello world"), vec!["hello", " world"]);
    }

    #[test]
    fn coverage_is_total() {
        for s in ["a  b\t\nc", "  leading", "trailing  ", "á rvíz\r\n", "x\u{85}y"] {
            let joined: String = pretokenize(s).collect();
            assert_eq!(joined, s);
        }
    }

    #[test]
    fn contractions() {
        assert_eq!(toks("it's"), vec!["it", "'s"]);
        assert_eq!(toks("we'll go"), vec!["we", "'ll", " go"]);
        // case-sensitive: 'S is not a contraction
        assert_eq!(toks("IT'S"), vec!["IT", "'", "S"]);
        // alternation is first-match: 's wins even mid-word
        assert_eq!(toks("'simple"), vec!["'s", "imple"]);
        // after an attached space the branch is a punct run, not a contraction
        assert_eq!(toks("a 's"), vec!["a", " '", "s"]);
    }

    #[test]
    fn category_runs() {
        assert_eq!(toks("abc123"), vec!["abc", "123"]);
        assert_eq!(toks("x=1+2"), vec!["x", "=", "1", "+", "2"]);
        assert_eq!(toks("!!!'s"), vec!["!!!'", "s"]);
        assert_eq!(toks(" !?"), vec![" !?"]);
    }

    #[test]
    fn whitespace_runs() {
        // last space of an interior run attaches to the next word
        assert_eq!(toks("a  b"), vec!["a", " ", " b"]);
        assert_eq!(toks("a   b"), vec!["a", "  ", " b"]);
        // non-space whitespace never attaches
        assert_eq!(toks("a\tb"), vec!["a", "\t", "b"]);
        assert_eq!(toks("a\t\nb"), vec!["a", "\t", "\n", "b"]);
        assert_eq!(toks("a\t\n b"), vec!["a", "\t\n", " b"]);
        // trailing run is a single token
        assert_eq!(toks("ab  "), vec!["ab", "  "]);
        assert_eq!(toks("  "), vec!["  "]);
    }

    #[test]
    fn hungarian_text() {
        assert_eq!(
            toks("árvíztűrő tükörfúrógép"),
            vec!["árvíztűrő", " tükörfúrógép"]
        );
        assert_eq!(toks("őz, szarvas"), vec!["őz", ",", " szarvas"]);
    }

    #[test]
    fn no_pretoken_spans_two_words() {
        let text = "egy kettő három\nnégy\töt 42 4096";
        for t in pretokenize(text) {
            assert!(
                t.trim().split_whitespace().count() <= 1,
                "pretoken {t:?} spans words"
            );
        }
    }

    #[test]
    fn word_counting() {
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("  \t"), 0);
        assert_eq!(word_count("a b  c"), 3);
        assert_eq!(word_count("árvíz? igen!"), 2);
    }
}
