use std::collections::{BTreeSet, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{splitmix64, stream_id, stream_rng};

use super::{hierarchy_oracle, Category, Document, DocumentElement, ElementId, QaSample, QuestionType};

const MAX_ELEMENTS_PER_PAGE: usize = 40;
const PAGE_MARGIN: f64 = 0.04;
const VIS_SCALE: f64 = 1.0;
const VIS_NOISE: f64 = 0.1;

const ADJECTIVES: &[&str] = &["robust", "scalable", "efficient", "neural", "sparse", "adaptive"];
const TOPICS: &[&str] = &[
    "graph",
    "layout",
    "parsing",
    "retrieval",
    "vision",
    "language",
    "document",
    "attention",
    "tokens",
    "features",
    "answers",
    "regions",
];
const SECTIONS: &[&str] = &[
    "introduction",
    "background",
    "methods",
    "results",
    "discussion",
    "evaluation",
    "experiments",
    "conclusion",
];
const VERBS: &[&str] = &["study", "measure", "report", "compare", "extend", "analyze"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_pages: usize,
    /// Inclusive `[min, max]` element count per page.
    pub elements_per_page: [usize; 2],
    pub max_depth: usize,
    pub d_vis: usize,
    pub questions_per_doc: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_pages: 2,
            elements_per_page: [3, 6],
            max_depth: 4,
            d_vis: 8,
            questions_per_doc: 4,
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<()> {
        let [lo, hi] = self.elements_per_page;
        if self.n_pages == 0 || lo == 0 || lo > hi {
            return Err(Error::Generation(format!(
                "empty range: n_pages {}, elements_per_page {:?}",
                self.n_pages, self.elements_per_page
            )));
        }
        if self.max_depth == 0 {
            return Err(Error::Generation("max_depth must be at least 1".into()));
        }
        if self.d_vis == 0 {
            return Err(Error::Generation("d_vis must be at least 1".into()));
        }
        if hi > MAX_ELEMENTS_PER_PAGE {
            return Err(Error::Generation(format!(
                "{hi} elements cannot be laid out without overlap on one page (limit {MAX_ELEMENTS_PER_PAGE})"
            )));
        }
        Ok(())
    }
}

struct Open {
    id: ElementId,
    key: Vec<usize>,
}

struct Builder {
    max_depth: usize,
    roots: usize,
    child_counts: HashMap<ElementId, usize>,
    title: Option<Open>,
    section: Option<Open>,
    pending_caption: Option<Open>,
}

impl Builder {
    fn choose(&self, rng: &mut Xoshiro256StarStar, first: bool) -> Category {
        if first || self.max_depth == 1 {
            return Category::Title;
        }
        let mut options: Vec<(Category, f64)> = vec![(Category::Title, 0.4)];
        if self.title.is_some() && self.max_depth >= 2 {
            options.push((Category::Section, 2.0));
        }
        if self.section.is_some() && self.max_depth >= 3 {
            options.extend([
                (Category::Paragraph, 4.0),
                (Category::Figure, 1.0),
                (Category::Table, 1.0),
                (Category::List, 1.0),
            ]);
        }
        if self.pending_caption.is_some() && self.max_depth >= 4 {
            options.push((Category::Caption, 5.0));
        }
        options.choose_weighted(rng, |o| o.1).expect("non-empty weights").0
    }

    /// Parent and hierarchical key for a new element, updating the open
    /// containers.
    fn place(&mut self, id: ElementId, category: Category) -> (Option<ElementId>, Vec<usize>) {
        let parent = match category {
            Category::Title => None,
            Category::Section => self.title.as_ref(),
            Category::Caption => self.pending_caption.as_ref(),
            _ => self.section.as_ref(),
        }
        .map(|o| (o.id, o.key.clone()));
        let key = match &parent {
            None => {
                self.roots += 1;
                vec![self.roots]
            }
            Some((pid, pkey)) => {
                let n = self.child_counts.entry(*pid).or_default();
                *n += 1;
                let mut k = pkey.clone();
                k.push(*n);
                k
            }
        };
        let open = Open { id, key: key.clone() };
        match category {
            Category::Title => {
                self.title = Some(open);
                self.section = None;
                self.pending_caption = None;
            }
            Category::Section => {
                self.section = Some(open);
                self.pending_caption = None;
            }
            Category::Figure | Category::Table => self.pending_caption = Some(open),
            _ => self.pending_caption = None,
        }
        (parent.map(|p| p.0), key)
    }
}

fn element_text(category: Category, key: &[usize], rng: &mut Xoshiro256StarStar) -> String {
    let key = key.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(".");
    let topic = TOPICS.choose(rng).unwrap();
    match category {
        Category::Title => {
            let adj = ADJECTIVES.choose(rng).unwrap();
            let other = TOPICS.choose(rng).unwrap();
            format!("{key} {adj} {topic} {other}")
        }
        Category::Section => format!("{key} {}", SECTIONS.choose(rng).unwrap()),
        Category::Paragraph => format!("{key} we {} {topic}", VERBS.choose(rng).unwrap()),
        Category::Figure => format!("{key} plot of {topic}"),
        Category::Table => format!("{key} grid of {topic}"),
        Category::List => format!("{key} items on {topic}"),
        Category::Caption => format!("{key} note on {topic}"),
    }
}

/// Top-to-bottom slot layout: element `slot` of `count` on one page.
fn layout(category: Category, slot: usize, count: usize, rng: &mut Xoshiro256StarStar) -> [f32; 4] {
    let h = (1.0 - 2.0 * PAGE_MARGIN) / count as f64;
    let top = PAGE_MARGIN + slot as f64 * h;
    let y1 = top + 0.1 * h;
    let y2 = y1 + h * rng.random_range(0.6..0.85);
    let (x1, x2) = match category {
        Category::Title => {
            let x1 = rng.random_range(0.15..0.3);
            (x1, 1.0 - x1)
        }
        Category::Figure | Category::Table => (rng.random_range(0.05..0.15), rng.random_range(0.5..0.8)),
        Category::Caption => (rng.random_range(0.05..0.15), rng.random_range(0.4..0.7)),
        _ => (rng.random_range(0.05..0.12), rng.random_range(0.85..0.95)),
    };
    [x1 as f32, y1 as f32, x2 as f32, y2 as f32]
}

fn descriptor(category: Category, d_vis: usize, rng: &mut Xoshiro256StarStar) -> Vec<f32> {
    let noise = Normal::new(0.0, VIS_NOISE).expect("positive sigma");
    (0..d_vis)
        .map(|j| {
            let hot = if j == category.index() % d_vis { VIS_SCALE } else { 0.0 };
            (hot + noise.sample(rng)) as f32
        })
        .collect()
}

/// Builds a typed element forest (title → section → body → caption) laid
/// out top to bottom on each page. Fully determined by `seed`.
pub fn generate_document(doc_id: &str, seed: u64, cfg: &GenConfig) -> Result<Document> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, stream_id("document"));
    let mut builder = Builder {
        max_depth: cfg.max_depth,
        roots: 0,
        child_counts: HashMap::new(),
        title: None,
        section: None,
        pending_caption: None,
    };
    let [lo, hi] = cfg.elements_per_page;
    let mut elements = Vec::new();
    for page in 0..cfg.n_pages {
        let count = rng.random_range(lo..=hi);
        for slot in 0..count {
            let id = elements.len();
            let category = builder.choose(&mut rng, id == 0);
            let (parent, key) = builder.place(id, category);
            let text = element_text(category, &key, &mut rng);
            let bbox = layout(category, slot, count, &mut rng);
            let vis = descriptor(category, cfg.d_vis, &mut rng);
            elements.push(DocumentElement {
                id,
                category,
                page,
                bbox,
                text,
                parent,
                vis,
            });
        }
    }
    let doc = Document {
        doc_id: doc_id.to_string(),
        elements,
        questions: Vec::new(),
    };
    doc.validate().map_err(Error::Generation)?;
    Ok(doc)
}

pub fn question_text(qtype: QuestionType, element: &DocumentElement) -> String {
    let category = element.category.as_str();
    match qtype {
        QuestionType::Children => format!(
            "which elements are the children of the {category} titled {}?",
            element.text
        ),
        QuestionType::Parent => format!("what is the parent of the {category} titled {}?", element.text),
    }
}

/// Draws up to `count` distinct `(type, target)` pairs, answering each with
/// the hierarchy oracle. When the document has any parent element at least
/// one children question with a non-empty answer is included.
pub fn generate_questions(doc: &Document, seed: u64, count: usize) -> Result<Vec<QaSample>> {
    if doc.elements.is_empty() {
        return Err(Error::contract("cannot ask questions about an empty document"));
    }
    let mut rng = stream_rng(seed, stream_id("questions"));
    let mut pairs: Vec<(QuestionType, ElementId)> = doc
        .elements
        .iter()
        .flat_map(|e| [(QuestionType::Parent, e.id), (QuestionType::Children, e.id)])
        .collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(count);

    let parents: BTreeSet<ElementId> = doc.elements.iter().filter_map(|e| e.parent).collect();
    let has_nonempty_children_q = pairs
        .iter()
        .any(|(q, t)| *q == QuestionType::Children && parents.contains(t));
    if !has_nonempty_children_q && !parents.is_empty() && !pairs.is_empty() {
        let choices: Vec<ElementId> = parents.into_iter().collect();
        let target = *choices.choose(&mut rng).unwrap();
        let replacement = (QuestionType::Children, target);
        if !pairs.contains(&replacement) {
            *pairs.last_mut().unwrap() = replacement;
        }
    }

    pairs
        .into_iter()
        .enumerate()
        .map(|(i, (qtype, target))| {
            let element = doc.element(target).ok_or(Error::UnknownElement(target))?;
            Ok(QaSample {
                qid: format!("{}-q{i}", doc.doc_id),
                qtype,
                target,
                question: question_text(qtype, element),
                answers: hierarchy_oracle(doc, qtype, target)?,
            })
        })
        .collect()
}

/// `n_docs` documents with questions; document `i` uses a seed derived from
/// `(seed, i)`.
pub fn generate_corpus(seed: u64, n_docs: usize, cfg: &GenConfig) -> Result<Vec<Document>> {
    (0..n_docs)
        .map(|i| {
            let doc_seed = splitmix64(seed ^ splitmix64(i as u64));
            let mut doc = generate_document(&format!("doc-{i:05}"), doc_seed, cfg)?;
            doc.questions = generate_questions(&doc, doc_seed, cfg.questions_per_doc)?;
            Ok(doc)
        })
        .collect()
}
