//! Hierarchical documents, question/answer samples, the ground-truth
//! hierarchy oracle, synthetic generation and JSON Lines storage.

mod generate;
mod io;

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use generate::{generate_corpus, generate_document, generate_questions, question_text, GenConfig};
pub use io::{parse_jsonl, read_jsonl, split_corpus, to_jsonl, write_jsonl, CorpusSplit, SplitName};

pub type ElementId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Title,
    Section,
    Paragraph,
    Figure,
    Table,
    Caption,
    List,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Title,
        Category::Section,
        Category::Paragraph,
        Category::Figure,
        Category::Table,
        Category::Caption,
        Category::List,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Title => "title",
            Category::Section => "section",
            Category::Paragraph => "paragraph",
            Category::Figure => "figure",
            Category::Table => "table",
            Category::Caption => "caption",
            Category::List => "list",
        }
    }

    /// Depth at which the generator places this category (roots are 1).
    pub fn level(self) -> usize {
        match self {
            Category::Title => 1,
            Category::Section => 2,
            Category::Paragraph | Category::Figure | Category::Table | Category::List => 3,
            Category::Caption => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentElement {
    pub id: ElementId,
    pub category: Category,
    pub page: usize,
    /// `(x1, y1, x2, y2)` normalized to the page.
    pub bbox: [f32; 4],
    pub text: String,
    // required even though nullable
    #[serde(deserialize_with = "Option::deserialize")]
    pub parent: Option<ElementId>,
    /// Synthetic region appearance descriptor.
    pub vis: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Parent,
    Children,
}

impl QuestionType {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::Parent => "parent",
            QuestionType::Children => "children",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaSample {
    pub qid: String,
    #[serde(rename = "type")]
    pub qtype: QuestionType,
    pub target: ElementId,
    pub question: String,
    pub answers: BTreeSet<ElementId>,
}

/// One JSON Lines record: a document's elements and the questions about it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    pub elements: Vec<DocumentElement>,
    pub questions: Vec<QaSample>,
}

impl Document {
    pub fn element(&self, id: ElementId) -> Option<&DocumentElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn position(&self, id: ElementId) -> Option<usize> {
        self.elements.iter().position(|e| e.id == id)
    }

    /// Checks id uniqueness, bbox validity, forest structure, descriptor
    /// widths and question references.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut ids = HashSet::new();
        for e in &self.elements {
            if !ids.insert(e.id) {
                return Err(format!("duplicate element id {}", e.id));
            }
            let [x1, y1, x2, y2] = e.bbox;
            if !(e.bbox.iter().all(|v| (0.0..=1.0).contains(v)) && x1 < x2 && y1 < y2) {
                return Err(format!("element {}: invalid bbox {:?}", e.id, e.bbox));
            }
        }
        if let Some(first) = self.elements.first() {
            if let Some(e) = self.elements.iter().find(|e| e.vis.len() != first.vis.len()) {
                return Err(format!(
                    "element {}: vis width {} differs from {}",
                    e.id,
                    e.vis.len(),
                    first.vis.len()
                ));
            }
        }
        let parent: HashMap<ElementId, Option<ElementId>> = self.elements.iter().map(|e| (e.id, e.parent)).collect();
        for e in &self.elements {
            if let Some(p) = e.parent {
                if !ids.contains(&p) {
                    return Err(format!("element {}: parent {p} does not exist", e.id));
                }
            }
            let mut cur = e.parent;
            let mut steps = 0;
            while let Some(p) = cur {
                steps += 1;
                if p == e.id || steps > self.elements.len() {
                    return Err(format!("element {}: parent links form a cycle", e.id));
                }
                cur = parent[&p];
            }
        }
        for q in &self.questions {
            if !ids.contains(&q.target) {
                return Err(format!("question {}: unknown target {}", q.qid, q.target));
            }
            if let Some(a) = q.answers.iter().find(|a| !ids.contains(a)) {
                return Err(format!("question {}: unknown answer id {a}", q.qid));
            }
        }
        Ok(())
    }

    /// Length of the longest root-to-leaf chain.
    pub fn depth(&self) -> usize {
        let parent: HashMap<ElementId, Option<ElementId>> = self.elements.iter().map(|e| (e.id, e.parent)).collect();
        self.elements
            .iter()
            .map(|e| {
                let mut d = 1;
                let mut cur = e.parent;
                while let Some(p) = cur {
                    d += 1;
                    cur = parent.get(&p).copied().flatten();
                }
                d
            })
            .max()
            .unwrap_or(0)
    }
}

/// How far "hierarchically related" reaches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HierarchyMode {
    /// Direct parent / direct children.
    #[default]
    Direct,
    /// All ancestors / all descendants.
    Transitive,
}

/// Parent and children adjacency for one document.
#[derive(Clone, Debug)]
pub struct Hierarchy {
    parent: HashMap<ElementId, Option<ElementId>>,
    children: HashMap<ElementId, Vec<ElementId>>,
}

impl Hierarchy {
    pub fn new(doc: &Document) -> Self {
        let mut children: HashMap<ElementId, Vec<ElementId>> = HashMap::new();
        let mut parent = HashMap::new();
        for e in &doc.elements {
            parent.insert(e.id, e.parent);
            children.entry(e.id).or_default();
            if let Some(p) = e.parent {
                children.entry(p).or_default().push(e.id);
            }
        }
        Self { parent, children }
    }

    pub fn parent(&self, id: ElementId) -> Result<Option<ElementId>> {
        self.parent.get(&id).copied().ok_or(Error::UnknownElement(id))
    }

    pub fn children(&self, id: ElementId) -> Result<&[ElementId]> {
        self.children
            .get(&id)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownElement(id))
    }

    pub fn related(&self, qtype: QuestionType, target: ElementId, mode: HierarchyMode) -> Result<BTreeSet<ElementId>> {
        let mut out = BTreeSet::new();
        match (qtype, mode) {
            (QuestionType::Parent, HierarchyMode::Direct) => out.extend(self.parent(target)?),
            (QuestionType::Parent, HierarchyMode::Transitive) => {
                let mut cur = self.parent(target)?;
                while let Some(p) = cur {
                    out.insert(p);
                    cur = self.parent(p)?;
                }
            }
            (QuestionType::Children, HierarchyMode::Direct) => out.extend(self.children(target)?),
            (QuestionType::Children, HierarchyMode::Transitive) => {
                let mut stack = self.children(target)?.to_vec();
                while let Some(c) = stack.pop() {
                    if out.insert(c) {
                        stack.extend(self.children(c)?);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Ground-truth answer set: direct children or the direct parent.
pub fn hierarchy_oracle(doc: &Document, qtype: QuestionType, target: ElementId) -> Result<BTreeSet<ElementId>> {
    hierarchy_oracle_with(doc, qtype, target, HierarchyMode::Direct)
}

pub fn hierarchy_oracle_with(
    doc: &Document,
    qtype: QuestionType,
    target: ElementId,
    mode: HierarchyMode,
) -> Result<BTreeSet<ElementId>> {
    Hierarchy::new(doc).related(qtype, target, mode)
}
