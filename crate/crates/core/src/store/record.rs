use serde::{Deserialize, Serialize};

/// The stage-by-stage ancestry of one prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionLineage {
    pub category: String,
    pub subcategory: String,
    pub subsubcategory: String,
    pub idea_caption: String,
    pub location_caption: String,
    pub subject_caption: String,
}

impl ExpansionLineage {
    pub fn is_complete(&self) -> bool {
        [
            &self.category,
            &self.subcategory,
            &self.subsubcategory,
            &self.idea_caption,
            &self.location_caption,
            &self.subject_caption,
        ]
        .iter()
        .all(|s| !s.trim().is_empty())
    }
}

/// Predicted attributes of the image a prompt would produce.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub location: String,
    pub subject: String,
    pub lighting: String,
    pub tone: String,
    pub mood: String,
    pub genre: String,
}

impl AnnotationSet {
    pub fn get(&self, field: AnnotationField) -> &str {
        match field {
            AnnotationField::Location => &self.location,
            AnnotationField::Subject => &self.subject,
            AnnotationField::Lighting => &self.lighting,
            AnnotationField::Tone => &self.tone,
            AnnotationField::Mood => &self.mood,
            AnnotationField::Genre => &self.genre,
        }
    }

    pub fn is_complete(&self) -> bool {
        AnnotationField::ALL.iter().all(|f| !self.get(*f).trim().is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationField {
    Location,
    Subject,
    Lighting,
    Tone,
    Mood,
    Genre,
}

impl AnnotationField {
    pub const ALL: [AnnotationField; 6] = [
        AnnotationField::Location,
        AnnotationField::Subject,
        AnnotationField::Lighting,
        AnnotationField::Tone,
        AnnotationField::Mood,
        AnnotationField::Genre,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationField::Location => "location",
            AnnotationField::Subject => "subject",
            AnnotationField::Lighting => "lighting",
            AnnotationField::Tone => "tone",
            AnnotationField::Mood => "mood",
            AnnotationField::Genre => "genre",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

/// One synthetic prompt with everything the map needs to show it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: u64,
    pub prompt: String,
    pub lineage: ExpansionLineage,
    pub annotations: AnnotationSet,
    pub embedding_row: Option<u64>,
    pub position: Option<[f32; 2]>,
    pub image_ref: Option<String>,
    #[serde(rename = "nsfw")]
    pub nsfw_flagged: bool,
}

impl PromptRecord {
    pub fn new(id: u64, prompt: impl Into<String>) -> Self {
        Self {
            id,
            prompt: prompt.into(),
            lineage: ExpansionLineage::default(),
            annotations: AnnotationSet::default(),
            embedding_row: None,
            position: None,
            image_ref: None,
            nsfw_flagged: false,
        }
    }
}
