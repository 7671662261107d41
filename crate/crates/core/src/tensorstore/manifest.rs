//! Corpus manifest: which sentences exist, how they relate to the originals,
//! and the tab-separated text format they are stored in.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Language {
    En,
    Es,
    It,
    Tr,
    De,
    Ar,
    Zh,
}

impl Language {
    pub const ALL: [Language; 7] = [
        Language::En,
        Language::Es,
        Language::It,
        Language::Tr,
        Language::De,
        Language::Ar,
        Language::Zh,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Es => "es",
            Language::It => "it",
            Language::Tr => "tr",
            Language::De => "de",
            Language::Ar => "ar",
            Language::Zh => "zh",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Language::ALL
            .iter()
            .copied()
            .find(|l| l.code() == s)
            .ok_or_else(|| Error::Format(format!("unknown language code `{s}`")))
    }
}

/// Relation of a sentence to its original.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SentenceRole {
    Original,
    SyntaxTwin,
    Paraphrase,
    Translation,
}

impl SentenceRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SentenceRole::Original => "original",
            SentenceRole::SyntaxTwin => "twin",
            SentenceRole::Paraphrase => "paraphrase",
            SentenceRole::Translation => "translation",
        }
    }
}

impl FromStr for SentenceRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(SentenceRole::Original),
            "twin" => Ok(SentenceRole::SyntaxTwin),
            "paraphrase" => Ok(SentenceRole::Paraphrase),
            "translation" => Ok(SentenceRole::Translation),
            other => Err(Error::Format(format!("unknown sentence role `{other}`"))),
        }
    }
}

/// The tensor-level grouping of sentences: one activation tensor per
/// dataset role and layer. Translations are split by language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DatasetRole {
    Original,
    Twin,
    Paraphrase,
    Translation(Language),
}

impl DatasetRole {
    pub fn name(self) -> String {
        match self {
            DatasetRole::Original => "original".into(),
            DatasetRole::Twin => "twin".into(),
            DatasetRole::Paraphrase => "paraphrase".into(),
            DatasetRole::Translation(lang) => format!("translation_{lang}"),
        }
    }

    fn matches(self, record: &SentenceRecord) -> bool {
        match self {
            DatasetRole::Original => record.role == SentenceRole::Original,
            DatasetRole::Twin => record.role == SentenceRole::SyntaxTwin,
            DatasetRole::Paraphrase => record.role == SentenceRole::Paraphrase,
            DatasetRole::Translation(lang) => {
                record.role == SentenceRole::Translation && record.language == lang
            }
        }
    }
}

impl fmt::Display for DatasetRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for DatasetRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(DatasetRole::Original),
            "twin" => Ok(DatasetRole::Twin),
            "paraphrase" => Ok(DatasetRole::Paraphrase),
            _ => match s.strip_prefix("translation_") {
                Some(code) => Ok(DatasetRole::Translation(code.parse()?)),
                None => Err(Error::Format(format!("unknown dataset role `{s}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceRecord {
    pub id: u32,
    pub text: String,
    pub role: SentenceRole,
    /// Space-joined Penn Treebank tags.
    pub pos_template: Option<String>,
    pub language: Language,
    /// Self for originals.
    pub original_id: u32,
    pub twin_index: Option<u32>,
}

impl SentenceRecord {
    fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.id,
            self.role.as_str(),
            self.language,
            self.pos_template.as_deref().unwrap_or("-"),
            self.original_id,
            self.twin_index
                .map(|t| t.to_string())
                .unwrap_or_else(|| "-".into()),
            self.text
        )
    }

    fn from_line(line: &str, lineno: usize) -> Result<Self> {
        let fields: Vec<&str> = line.splitn(7, '\t').collect();
        if fields.len() != 7 {
            return Err(Error::Format(format!(
                "manifest line {lineno}: expected 7 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let int = |s: &str, what: &str| -> Result<u32> {
            s.parse().map_err(|_| {
                Error::Format(format!("manifest line {lineno}: bad {what} `{s}`"))
            })
        };
        let optional = |s: &str| (s != "-").then(|| s.to_string());
        Ok(SentenceRecord {
            id: int(fields[0], "id")?,
            role: fields[1].parse()?,
            language: fields[2].parse()?,
            pos_template: optional(fields[3]).map(|t| normalize_template(&t)),
            original_id: int(fields[4], "original_id")?,
            twin_index: match fields[5] {
                "-" => None,
                s => Some(int(s, "twin_index")?),
            },
            text: fields[6].to_string(),
        })
    }
}

fn normalize_template(t: &str) -> String {
    t.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Validated collection of sentence records, sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    records: Vec<SentenceRecord>,
    pos_template_index: BTreeMap<String, Vec<u32>>,
    languages: Vec<Language>,
    by_id: HashMap<u32, usize>,
}

impl CorpusManifest {
    pub fn new(mut records: Vec<SentenceRecord>) -> Result<Self> {
        records.sort_by_key(|r| r.id);
        let mut by_id = HashMap::with_capacity(records.len());
        for (pos, r) in records.iter().enumerate() {
            if by_id.insert(r.id, pos).is_some() {
                return Err(Error::Consistency(format!("duplicate sentence id {}", r.id)));
            }
        }

        let mut paraphrases = HashSet::new();
        let mut translations = HashSet::new();
        let mut twins = HashSet::new();
        for r in &records {
            if r.role == SentenceRole::Original {
                if r.original_id != r.id {
                    return Err(Error::Consistency(format!(
                        "original {} must reference itself, found original_id {}",
                        r.id, r.original_id
                    )));
                }
                continue;
            }
            let original = by_id
                .get(&r.original_id)
                .map(|&p| &records[p])
                .filter(|o| o.role == SentenceRole::Original)
                .ok_or_else(|| {
                    Error::Consistency(format!(
                        "sentence {} references missing original {}",
                        r.id, r.original_id
                    ))
                })?;
            match r.role {
                SentenceRole::SyntaxTwin => {
                    let index = r.twin_index.ok_or_else(|| {
                        Error::Consistency(format!("twin {} has no twin_index", r.id))
                    })?;
                    if !twins.insert((r.original_id, index)) {
                        return Err(Error::Consistency(format!(
                            "original {} has two twins with index {index}",
                            r.original_id
                        )));
                    }
                    if r.pos_template != original.pos_template {
                        return Err(Error::Consistency(format!(
                            "twin {} has POS template {:?} but its original {} has {:?}",
                            r.id, r.pos_template, original.id, original.pos_template
                        )));
                    }
                }
                SentenceRole::Paraphrase => {
                    if !paraphrases.insert(r.original_id) {
                        return Err(Error::Consistency(format!(
                            "original {} has more than one paraphrase",
                            r.original_id
                        )));
                    }
                }
                SentenceRole::Translation => {
                    if !translations.insert((r.original_id, r.language)) {
                        return Err(Error::Consistency(format!(
                            "original {} has more than one `{}` translation",
                            r.original_id, r.language
                        )));
                    }
                }
                SentenceRole::Original => unreachable!(),
            }
        }

        let mut pos_template_index: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        let mut languages = Vec::new();
        for r in &records {
            if let Some(t) = &r.pos_template {
                pos_template_index.entry(t.clone()).or_default().push(r.id);
            }
            if r.role == SentenceRole::Translation && !languages.contains(&r.language) {
                languages.push(r.language);
            }
        }

        Ok(CorpusManifest {
            records,
            pos_template_index,
            languages,
            by_id,
        })
    }

    pub fn records(&self) -> &[SentenceRecord] {
        &self.records
    }

    pub fn pos_template_index(&self) -> &BTreeMap<String, Vec<u32>> {
        &self.pos_template_index
    }

    /// Translation languages in order of first appearance.
    pub fn languages(&self) -> &[Language] {
        &self.languages
    }

    /// Number of original sentences.
    pub fn n_sentences(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.role == SentenceRole::Original)
            .count()
    }

    pub fn record(&self, id: u32) -> Option<&SentenceRecord> {
        self.by_id.get(&id).map(|&p| &self.records[p])
    }

    /// Records of one dataset role, in id order. This is the row order of
    /// the role's activation tensors.
    pub fn role_records(&self, role: DatasetRole) -> impl Iterator<Item = &SentenceRecord> {
        self.records.iter().filter(move |r| role.matches(r))
    }

    pub fn role_len(&self, role: DatasetRole) -> usize {
        self.role_records(role).count()
    }

    /// Dataset roles with at least one record.
    pub fn dataset_roles(&self) -> Vec<DatasetRole> {
        let mut roles = vec![DatasetRole::Original, DatasetRole::Twin, DatasetRole::Paraphrase];
        roles.extend(self.languages.iter().map(|&l| DatasetRole::Translation(l)));
        roles.retain(|&r| self.role_len(r) > 0);
        roles
    }

    pub fn original_ids(&self) -> Vec<u32> {
        self.role_records(DatasetRole::Original).map(|r| r.id).collect()
    }

    pub fn template_of(&self, id: u32) -> Option<&str> {
        self.record(id).and_then(|r| r.pos_template.as_deref())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| SentenceRecord::from_line(l, i + 1))
            .collect::<Result<Vec<_>>>()?;
        CorpusManifest::new(records)
    }
}
