use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::store::ExpansionLineage;

/// Instruction templates sent to a remote LLM, one per stage plus `label`.
/// The built-in texts are original to this project; a directory of
/// `<name>.txt` files overrides them without a rebuild.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageTemplates {
    templates: BTreeMap<String, String>,
}

const BUILTIN: [(&str, &str); 8] = [
    ("subcategory", include_str!("../../templates/subcategory.txt")),
    ("subsubcategory", include_str!("../../templates/subsubcategory.txt")),
    ("idea", include_str!("../../templates/idea.txt")),
    ("location", include_str!("../../templates/location.txt")),
    ("subject", include_str!("../../templates/subject.txt")),
    ("prompt", include_str!("../../templates/prompt.txt")),
    ("annotation", include_str!("../../templates/annotation.txt")),
    ("label", include_str!("../../templates/label.txt")),
];

impl Default for StageTemplates {
    fn default() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.trim().to_string()))
                .collect(),
        }
    }
}

impl StageTemplates {
    pub fn load(dir: Option<&Path>) -> Result<Self> {
        let mut t = Self::default();
        if let Some(dir) = dir {
            for (name, _) in BUILTIN {
                let path = dir.join(format!("{name}.txt"));
                match std::fs::read_to_string(&path) {
                    Ok(text) => {
                        t.templates.insert(name.to_string(), text.trim().to_string());
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                    Err(e) => return Err(Error::io(path, e)),
                }
            }
        }
        Ok(t)
    }

    /// Fills `{n}`, `{prompt}`, `{samples}` and the lineage placeholders.
    pub fn render(
        &self,
        name: &str,
        lineage: &ExpansionLineage,
        n: usize,
        prompt: &str,
        samples: &[String],
    ) -> Result<String> {
        let template = self
            .templates
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("no template named {name}")))?;
        let pairs = [
            ("{n}", n.to_string()),
            ("{category}", lineage.category.clone()),
            ("{subcategory}", lineage.subcategory.clone()),
            ("{subsubcategory}", lineage.subsubcategory.clone()),
            ("{idea}", lineage.idea_caption.clone()),
            ("{location}", lineage.location_caption.clone()),
            ("{subject}", lineage.subject_caption.clone()),
            ("{prompt}", prompt.to_owned()),
            ("{samples}", samples.join("; ")),
        ];
        let mut out = template.clone();
        for (k, v) in pairs {
            out = out.replace(k, &v);
        }
        Ok(out)
    }
}
