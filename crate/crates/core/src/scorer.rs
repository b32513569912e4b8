//! One interface over every trained artifact: a neural checkpoint or a
//! LIST word list.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::metrics::{Scored, ScoredSet};
use crate::models::{Model, Prediction, Variant, WordList};
use crate::textpipe::{tokenize, Comment, Vocabulary, MAX_TOKENS};

/// Word-list file name inside a model directory.
pub const WORDLIST_FILE: &str = "wordlist.tsv";

#[derive(Clone, Debug)]
pub enum Scorer {
    Neural {
        model: Box<Model>,
        vocab: Vocabulary,
        version: String,
    },
    List {
        list: WordList,
        version: String,
    },
}

impl Scorer {
    pub fn neural(model: Model, vocab: Vocabulary) -> Self {
        let version = format!(
            "{}-{}-{}",
            model.variant(),
            vocab.fingerprint(),
            checkpoint::model_fingerprint(&model)
        );
        Scorer::Neural {
            model: Box::new(model),
            vocab,
            version,
        }
    }

    pub fn list(list: WordList) -> Self {
        let digest = Sha256::digest(list.to_tsv().as_bytes());
        let version = format!("list-{}", hex::encode(&digest[..6]));
        Scorer::List { list, version }
    }

    /// A directory is read as a checkpoint (or as a word list when it holds
    /// only [`WORDLIST_FILE`]), a file as a word-list TSV.
    pub fn load(path: &Path) -> Result<Self> {
        if path.is_dir()
            && !path.join(checkpoint::MANIFEST).exists()
            && path.join(WORDLIST_FILE).is_file()
        {
            Ok(Self::list(WordList::load(&path.join(WORDLIST_FILE))?))
        } else if path.is_dir() {
            let (model, vocab, _) = checkpoint::load(path)?;
            Ok(Self::neural(model, vocab))
        } else if path.is_file() {
            Ok(Self::list(WordList::load(path)?))
        } else {
            Err(Error::Checkpoint(format!("no model at {}", path.display())))
        }
    }

    pub fn variant(&self) -> Variant {
        match self {
            Scorer::Neural { model, .. } => model.variant(),
            Scorer::List { .. } => Variant::List,
        }
    }

    pub fn version(&self) -> &str {
        match self {
            Scorer::Neural { version, .. } | Scorer::List { version, .. } => version,
        }
    }

    pub fn score_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Prediction> {
        match self {
            Scorer::Neural { model, vocab, .. } => model.predict(&vocab.encode(tokens)),
            Scorer::List { list, .. } => Ok(list.score(tokens)),
        }
    }

    /// Tokenizes, truncates and scores raw text. Returns the tokens too.
    pub fn score_text(&self, text: &str) -> Result<(Vec<String>, Prediction)> {
        let mut tokens = tokenize(text);
        tokens.truncate(MAX_TOKENS);
        let p = self.score_tokens(&tokens)?;
        Ok((tokens, p))
    }

    /// Scores labeled comments; every comment needs a gold label.
    pub fn score_set(&self, comments: &[Comment]) -> Result<ScoredSet> {
        let mut items = Vec::with_capacity(comments.len());
        for c in comments {
            let gold = c
                .gold
                .ok_or_else(|| Error::Data(format!("comment {} has no label", c.id)))?;
            items.push(Scored {
                id: c.id.clone(),
                p: self.score_tokens(&c.tokens)?.p,
                gold,
                ts: c.ts,
            });
        }
        ScoredSet::new(items)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::seeded;
    use crate::models::{CnnConfig, ModelConfig};

    fn corpus() -> Vec<Comment> {
        vec![
            Comment::new("a", "you idiot", Some(1.0), 1),
            Comment::new("b", "you are kind", Some(0.0), 2),
            Comment::new("c", "idiot idea", Some(1.0), 3),
        ]
    }

    #[test]
    fn list_scorer_scores_by_max_precision() {
        let s = Scorer::list(WordList::build(&corpus(), 0).unwrap());
        assert_eq!(s.variant(), Variant::List);
        assert!(s.version().starts_with("list-"));
        let (tokens, p) = s.score_text("Idiot!").unwrap();
        assert_eq!(tokens, ["idiot", "!"]);
        assert_eq!(p.p, 1.0);
        assert_eq!(s.score_tokens(&["you"]).unwrap().p, 0.5);
    }

    #[test]
    fn loads_both_kinds_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let docs: Vec<Vec<String>> = corpus().into_iter().map(|c| c.tokens).collect();
        let vocab = Vocabulary::build(&docs, 1).unwrap();
        let cfg = ModelConfig {
            d: 4,
            m: 3,
            r: 2,
            l: 2,
            cnn: CnnConfig::wikipedia(),
            ..ModelConfig::new(Variant::ARnn, vocab.rows())
        };
        let mut model = Model::init(cfg, None, &mut seeded(1)).unwrap();
        model.round_to_f32();
        let ckpt = dir.path().join("ckpt");
        checkpoint::save(&ckpt, &model, &vocab, 1).unwrap();
        let neural = Scorer::load(&ckpt).unwrap();
        let direct = Scorer::neural(model, vocab);
        assert_eq!(neural.version(), direct.version());
        let (_, a) = neural.score_text("you idiot").unwrap();
        let (_, b) = direct.score_text("you idiot").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.attention.as_ref().unwrap().len(), 2);

        let list_path = dir.path().join("list.tsv");
        WordList::build(&corpus(), 0)
            .unwrap()
            .save(&list_path)
            .unwrap();
        assert_eq!(Scorer::load(&list_path).unwrap().variant(), Variant::List);
        let list_dir = dir.path().join("listdir");
        std::fs::create_dir(&list_dir).unwrap();
        std::fs::copy(&list_path, list_dir.join(WORDLIST_FILE)).unwrap();
        assert_eq!(Scorer::load(&list_dir).unwrap().variant(), Variant::List);
        assert!(Scorer::load(&dir.path().join("missing")).is_err());

        let set = direct.score_set(&corpus()).unwrap();
        assert_eq!(set.len(), 3);
        let unlabeled = [Comment::new("x", "hi", None, 0)];
        assert!(direct.score_set(&unlabeled).is_err());
    }
}
