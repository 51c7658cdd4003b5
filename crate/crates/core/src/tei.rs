//! TEI XML ingestion.
//!
//! Reads the TEI produced by an external PDF parser (GROBID layout) into a
//! [`Document`]:
//!
//! ```xml
//! <TEI xmlns="http://www.tei-c.org/ns/1.0">
//!   <teiHeader>
//!     <fileDesc><titleStmt><title>...</title></titleStmt></fileDesc>
//!     <profileDesc><abstract><p>...</p></abstract></profileDesc>
//!   </teiHeader>
//!   <text><body>
//!     <div><head>Introduction</head><p>...</p></div>
//!     <figure type="table"><head>Table 1</head><figDesc>...</figDesc>
//!       <table><row><cell>...</cell></row></table></figure>
//!   </body></text>
//! </TEI>
//! ```
//!
//! All extracted text is whitespace-normalized. Inline markup inside
//! paragraphs (`<ref>`, `<formula>`, `<hi>`, ...) contributes its text
//! content. Nested divisions are flattened depth-first.

use std::io::BufRead;
use std::path::Path;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_ws;

#[derive(Debug, Error)]
pub enum TeiError {
    #[error("malformed TEI XML at byte {offset}: {message}")]
    Malformed { offset: u64, message: String },
    #[error("empty paper id")]
    EmptyPaperId,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub heading: String,
    pub body: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableInfo {
    pub caption: String,
    /// Row-major cell texts. Rows may be ragged.
    pub cells: Vec<Vec<String>>,
}

/// A structured scholarly article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub paper_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub sections: Vec<Section>,
    pub tables: Vec<TableInfo>,
}

impl Document {
    pub fn empty(paper_id: impl Into<String>) -> Self {
        Self {
            paper_id: paper_id.into(),
            title: String::new(),
            abstract_text: String::new(),
            sections: Vec::new(),
            tables: Vec::new(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("document serializes")
    }

    pub fn from_json_line(line: &str) -> serde_json::Result<Self> {
        serde_json::from_str(line)
    }
}

/// Paper id for a file named `<paper_id>.tei.xml`.
pub fn paper_id_from_path(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    let id = name.strip_suffix(".tei.xml")?;
    (!id.is_empty()).then(|| id.to_string())
}

pub fn parse_tei_file(path: &Path) -> Result<Document, TeiError> {
    let paper_id = paper_id_from_path(path).ok_or(TeiError::EmptyPaperId)?;
    let bytes = std::fs::read(path)?;
    parse_tei(&bytes[..], &paper_id)
}

struct DivFrame {
    slot: usize,
    head: String,
    paragraphs: Vec<String>,
    has_child_div: bool,
}

#[derive(Default)]
struct TableFrame {
    head: String,
    fig_desc: String,
    rows: Vec<Vec<String>>,
    cell: Option<String>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Capture {
    Title,
    Abstract,
    AbstractParagraph,
    DivHead,
    Paragraph,
    TableHead,
    FigDesc,
    Cell,
}

/// Parses one TEI document.
pub fn parse_tei<R: BufRead>(input: R, paper_id: &str) -> Result<Document, TeiError> {
    if paper_id.trim().is_empty() {
        return Err(TeiError::EmptyPaperId);
    }
    let mut reader = Reader::from_reader(input);
    let mut buf = Vec::new();

    let mut stack: Vec<Vec<u8>> = Vec::new();
    let mut seen_root = false;

    let mut title: Option<String> = None;
    let mut title_buf = String::new();
    let mut abstract_all = String::new();
    let mut abstract_paras: Vec<String> = Vec::new();
    let mut para_buf = String::new();
    let mut head_buf = String::new();

    let mut slots: Vec<Option<Section>> = Vec::new();
    let mut divs: Vec<DivFrame> = Vec::new();
    let mut tables: Vec<TableInfo> = Vec::new();
    let mut table: Option<TableFrame> = None;
    // (capture kind, stack depth at which it started)
    let mut capture: Option<(Capture, usize)> = None;

    let malformed = |reader: &Reader<R>, message: String| TeiError::Malformed {
        offset: reader.buffer_position(),
        message,
    };

    loop {
        buf.clear();
        let event = reader
            .read_event_into(&mut buf)
            .map_err(|e| malformed(&reader, e.to_string()))?;
        match event {
            Event::Start(ref e) => {
                if stack.is_empty() && seen_root {
                    return Err(malformed(&reader, "multiple root elements".into()));
                }
                seen_root = true;
                let name = e.local_name().as_ref().to_vec();
                let depth = stack.len() + 1;
                if capture.is_none() {
                    capture = open_element(
                        &name,
                        e,
                        &stack,
                        title.is_some(),
                        &mut divs,
                        &mut slots,
                        &mut table,
                    )
                    .map(|c| (c, depth));
                    match capture {
                        Some((Capture::Title, _)) => title_buf.clear(),
                        Some((Capture::Paragraph | Capture::AbstractParagraph, _)) => {
                            para_buf.clear()
                        }
                        Some((Capture::DivHead | Capture::TableHead | Capture::FigDesc, _)) => {
                            head_buf.clear()
                        }
                        _ => {}
                    }
                } else if matches!(capture, Some((Capture::Abstract, _))) && name == b"p" {
                    // paragraphs nested in <abstract><div>
                    capture = Some((Capture::AbstractParagraph, depth));
                    para_buf.clear();
                }
                stack.push(name);
            }
            Event::Empty(ref e) => {
                if stack.is_empty() && seen_root {
                    return Err(malformed(&reader, "multiple root elements".into()));
                }
                seen_root = true;
                let name = e.local_name();
                if capture.is_none() && name.as_ref() == b"row" {
                    if let Some(t) = table.as_mut() {
                        t.rows.push(Vec::new());
                    }
                } else if capture.is_none() && name.as_ref() == b"cell" {
                    if let Some(t) = table.as_mut() {
                        if t.rows.is_empty() {
                            t.rows.push(Vec::new());
                        }
                        t.rows.last_mut().unwrap().push(String::new());
                    }
                }
            }
            Event::End(_) => {
                let depth = stack.len();
                let name = stack
                    .pop()
                    .ok_or_else(|| malformed(&reader, "unexpected closing tag".into()))?;
                if let Some((kind, start)) = capture {
                    if start == depth {
                        capture = None;
                        match kind {
                            Capture::Title => title = Some(normalize_ws(&title_buf)),
                            Capture::Abstract => {}
                            Capture::AbstractParagraph => {
                                abstract_paras.push(normalize_ws(&para_buf));
                                // back inside the abstract, if still open
                                if stack.iter().any(|n| n == b"abstract") {
                                    let abs_depth =
                                        stack.iter().rposition(|n| n == b"abstract").unwrap() + 1;
                                    capture = Some((Capture::Abstract, abs_depth));
                                }
                            }
                            Capture::Paragraph => {
                                if let Some(d) = divs.last_mut() {
                                    d.paragraphs.push(normalize_ws(&para_buf));
                                }
                            }
                            Capture::DivHead => {
                                if let Some(d) = divs.last_mut() {
                                    d.head = normalize_ws(&head_buf);
                                }
                            }
                            Capture::TableHead => {
                                if let Some(t) = table.as_mut() {
                                    t.head = normalize_ws(&head_buf);
                                }
                            }
                            Capture::FigDesc => {
                                if let Some(t) = table.as_mut() {
                                    t.fig_desc = normalize_ws(&head_buf);
                                }
                            }
                            Capture::Cell => {
                                if let Some(t) = table.as_mut() {
                                    let text = normalize_ws(&t.cell.take().unwrap_or_default());
                                    if t.rows.is_empty() {
                                        t.rows.push(Vec::new());
                                    }
                                    t.rows.last_mut().unwrap().push(text);
                                }
                            }
                        }
                    }
                    continue;
                }
                match name.as_slice() {
                    b"div" if in_body(&stack) || !divs.is_empty() => {
                        if let Some(frame) = divs.pop() {
                            close_div(frame, &mut slots);
                        }
                    }
                    b"figure" => {
                        if let Some(t) = table.take() {
                            let caption = if t.fig_desc.is_empty() { t.head } else { t.fig_desc };
                            tables.push(TableInfo {
                                caption,
                                cells: t.rows,
                            });
                        }
                    }
                    _ => {}
                }
            }
            Event::Text(ref t) => {
                if let Some((kind, _)) = capture {
                    let text = t
                        .unescape()
                        .map_err(|e| malformed(&reader, e.to_string()))?;
                    push_text(
                        kind,
                        &text,
                        &mut title_buf,
                        &mut abstract_all,
                        &mut para_buf,
                        &mut head_buf,
                        &mut table,
                    );
                }
            }
            Event::CData(ref t) => {
                if let Some((kind, _)) = capture {
                    let text = String::from_utf8_lossy(t.as_ref()).into_owned();
                    push_text(
                        kind,
                        &text,
                        &mut title_buf,
                        &mut abstract_all,
                        &mut para_buf,
                        &mut head_buf,
                        &mut table,
                    );
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }

    if !stack.is_empty() {
        let open = String::from_utf8_lossy(stack.last().unwrap()).into_owned();
        return Err(malformed(&reader, format!("unclosed element <{open}>")));
    }
    if !seen_root {
        return Err(malformed(&reader, "no root element".into()));
    }

    let abstract_text = if abstract_paras.is_empty() {
        normalize_ws(&abstract_all)
    } else {
        let joined = abstract_paras.join(" ");
        normalize_ws(&joined)
    };

    Ok(Document {
        paper_id: paper_id.to_string(),
        title: title.unwrap_or_default(),
        abstract_text,
        sections: slots.into_iter().flatten().collect(),
        tables,
    })
}

fn in_body(stack: &[Vec<u8>]) -> bool {
    stack.iter().any(|n| n == b"body")
}

fn attr_eq(e: &BytesStart<'_>, key: &[u8], value: &[u8]) -> bool {
    e.attributes()
        .flatten()
        .any(|a| a.key.local_name().as_ref() == key && a.value.as_ref() == value)
}

fn open_element(
    name: &[u8],
    e: &BytesStart<'_>,
    stack: &[Vec<u8>],
    have_title: bool,
    divs: &mut Vec<DivFrame>,
    slots: &mut Vec<Option<Section>>,
    table: &mut Option<TableFrame>,
) -> Option<Capture> {
    let in_header = stack.iter().any(|n| n == b"teiHeader");
    if in_header {
        return match name {
            b"title" if !have_title && stack.iter().any(|n| n == b"titleStmt") => {
                Some(Capture::Title)
            }
            b"abstract" => Some(Capture::Abstract),
            _ => None,
        };
    }
    if !in_body(stack) {
        return None;
    }
    if let Some(t) = table.as_mut() {
        return match name {
            b"head" => Some(Capture::TableHead),
            b"figDesc" => Some(Capture::FigDesc),
            b"row" => {
                t.rows.push(Vec::new());
                None
            }
            b"cell" => {
                t.cell = Some(String::new());
                Some(Capture::Cell)
            }
            _ => None,
        };
    }
    match name {
        b"figure" if attr_eq(e, b"type", b"table") => {
            *table = Some(TableFrame::default());
            None
        }
        b"div" => {
            if let Some(parent) = divs.last_mut() {
                parent.has_child_div = true;
            }
            slots.push(None);
            divs.push(DivFrame {
                slot: slots.len() - 1,
                head: String::new(),
                paragraphs: Vec::new(),
                has_child_div: false,
            });
            None
        }
        b"head" if !divs.is_empty() && stack.last().map(|n| n == b"div").unwrap_or(false) => {
            Some(Capture::DivHead)
        }
        b"p" if !divs.is_empty() => Some(Capture::Paragraph),
        _ => None,
    }
}

fn close_div(frame: DivFrame, slots: &mut [Option<Section>]) {
    let has_own = !frame.head.is_empty() || !frame.paragraphs.is_empty();
    if !frame.has_child_div || has_own {
        let body = frame
            .paragraphs
            .iter()
            .filter(|p| !p.is_empty())
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(" ");
        slots[frame.slot] = Some(Section {
            heading: frame.head,
            body,
        });
    }
}

fn push_text(
    kind: Capture,
    text: &str,
    title_buf: &mut String,
    abstract_all: &mut String,
    para_buf: &mut String,
    head_buf: &mut String,
    table: &mut Option<TableFrame>,
) {
    let target = match kind {
        Capture::Title => title_buf,
        Capture::Abstract => abstract_all,
        Capture::AbstractParagraph => {
            abstract_all.push(' ');
            abstract_all.push_str(text);
            para_buf
        }
        Capture::Paragraph => para_buf,
        Capture::DivHead | Capture::TableHead | Capture::FigDesc => head_buf,
        Capture::Cell => match table.as_mut().and_then(|t| t.cell.as_mut()) {
            Some(cell) => cell,
            None => return,
        },
    };
    target.push_str(text);
}
