//! Deterministic template backend. Every output is a pure function of the
//! request seed and context, so corpora are reproducible byte-for-byte.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backend::TextGenerator;
use super::Stage;
use crate::embed::tokenize;
use crate::error::Result;
use crate::hash::{derive_seed, hash_str};
use crate::store::{AnnotationSet, ExpansionLineage};

const MODIFIERS: &[&str] = &[
    "ancient", "futuristic", "miniature", "abandoned", "colorful", "minimalist", "gigantic",
    "hidden", "floating", "underwater", "frozen", "glowing", "overgrown", "rustic", "luxurious",
    "tiny", "vintage", "surreal", "cozy", "majestic", "crumbling", "bustling", "quiet",
    "mysterious", "celestial", "mechanical", "crystal", "wooden", "paper", "foggy", "sunlit",
    "desert", "tropical", "arctic", "urban", "rural", "forgotten", "royal", "humble", "secret",
];

const ASPECTS: &[&str] = &[
    "at night", "in winter", "in spring", "during festivals", "after rain", "at dawn",
    "in the fog", "under snow", "at dusk", "from above", "up close", "in ruins", "in bloom",
    "in motion", "at rest", "in silhouette", "in reflection", "through a window",
    "in the distance", "by candlelight", "in summer", "in autumn", "at noon", "in the wind",
];

const LIGHTS: &[&str] = &[
    "golden sunset", "misty dawn", "soft moonlight", "neon glow", "stormy sky",
    "warm candlelight", "bright noon sun", "pale winter light", "dark thunderclouds",
    "gentle morning light", "fiery sunrise", "starlit night", "hazy twilight",
    "crisp autumn light", "faint rainbow", "dappled sunlight", "cold blue dusk", "amber lamplight",
];

const LIGHT_VERBS: &[&str] = &[
    "shining on", "falling over", "glowing above", "washing over", "spilling across", "framing",
    "settling on", "lighting up", "drifting past", "surrounding", "reflecting off", "fading over",
];

const PLACES: &[&str] = &[
    "courtyard", "rooftop terrace", "narrow alley", "hilltop", "riverbank", "market square",
    "balcony", "garden path", "harbor pier", "forest clearing", "old bridge", "station platform",
    "mountain pass", "beach cove", "town square", "village street", "glass atrium",
    "stone stairway", "open field", "lakeside dock", "cliff edge", "palace hall",
];

const RELATIONS: &[&str] = &["overlooking", "near", "beside", "below", "facing", "behind"];

const LANDMARKS: &[&str] = &[
    "a quiet harbor", "the city skyline", "snowy peaks", "a winding river", "an old cathedral",
    "rolling hills", "a misty valley", "the open sea", "a busy boulevard", "a pine forest",
    "distant volcanoes", "palm springs", "a sleepy village", "desert dunes", "a frozen lake",
    "terraced fields", "a crowded market", "a ruined fortress", "a coral lagoon", "red canyons",
];

const AGENTS: &[&str] = &[
    "young painter", "old fisherman", "curious child", "lone traveler", "street musician",
    "golden retriever", "elderly couple", "astronaut", "knight", "photographer", "dancer",
    "gardener", "small robot", "ginger cat", "chef", "scientist", "monk", "sailor", "archer",
    "tourist", "shepherd", "clockmaker", "botanist", "pilot", "fox",
];

const ACTIVITIES: &[&str] = &[
    "admiring", "sketching", "exploring", "photographing", "guarding", "repairing", "cleaning",
    "watching", "decorating", "studying", "circling", "painting", "measuring", "visiting",
];

const LIGHTING_RULES: &[(&str, &str)] = &[
    ("sunset", "golden hour"),
    ("sunrise", "golden hour"),
    ("dawn", "soft dawn light"),
    ("moonlight", "moonlight"),
    ("moonlit", "moonlight"),
    ("starlit", "starlight"),
    ("night", "low-key night light"),
    ("neon", "neon glow"),
    ("candlelight", "candlelight"),
    ("lamplight", "warm practical light"),
    ("stormy", "overcast"),
    ("thunderclouds", "overcast"),
    ("misty", "diffused fog light"),
    ("fog", "diffused fog light"),
    ("noon", "harsh midday sun"),
    ("twilight", "blue hour"),
    ("dusk", "blue hour"),
];

const LIGHTING: &[&str] = &[
    "natural daylight", "soft diffused light", "studio lighting", "backlit", "rim lighting",
    "dramatic chiaroscuro",
];
const TONES: &[&str] = &[
    "warm", "cool", "muted", "vibrant", "pastel", "monochrome", "high contrast", "earthy",
];
const MOODS: &[&str] = &[
    "serene", "nostalgic", "mysterious", "joyful", "melancholic", "adventurous", "whimsical",
    "tense", "peaceful", "awe-inspiring",
];
const GENRES: &[&str] = &[
    "landscape photography", "fantasy illustration", "street photography", "concept art",
    "oil painting", "watercolor", "cinematic still", "documentary photography", "digital art",
    "sci-fi illustration",
];

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "at", "on", "and", "or", "with", "near", "by", "for", "to",
    "from", "his", "her", "their", "its", "is", "are", "over", "under", "into", "during",
];

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("vocabulary is non-empty")
}

fn pick_by_hash<'a>(seed: u64, salt: &str, xs: &[&'a str]) -> &'a str {
    xs[(hash_str(seed, salt) % xs.len() as u64) as usize]
}

fn first_word(s: &str) -> &str {
    s.split_whitespace().next().unwrap_or("scene")
}

fn last_word(s: &str) -> &str {
    s.split_whitespace().last().unwrap_or("scene")
}

/// Template backend with fixed vocabularies. Stage outputs are built from
/// the parent context so lineage stays visible in the text.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateMock;

impl TemplateMock {
    pub fn new() -> Self {
        Self
    }

    fn child(&self, stage: Stage, ctx: &ExpansionLineage, rng: &mut ChaCha8Rng) -> String {
        let topic = last_word(&ctx.category);
        match stage {
            Stage::Subcategory => format!("{} {}", pick(rng, MODIFIERS), ctx.category),
            Stage::Subsubcategory => format!("{} {}", ctx.subcategory, pick(rng, ASPECTS)),
            Stage::Idea => format!(
                "{} {} {} {}",
                pick(rng, LIGHTS),
                pick(rng, LIGHT_VERBS),
                first_word(&ctx.subcategory),
                topic
            ),
            Stage::Location => format!(
                "{} {} {}",
                pick(rng, PLACES),
                pick(rng, RELATIONS),
                pick(rng, LANDMARKS)
            ),
            Stage::Subject => format!("{} {} the {}", pick(rng, AGENTS), pick(rng, ACTIVITIES), topic),
            Stage::Category | Stage::Prompt | Stage::Annotation => ctx.category.clone(),
        }
    }

    /// The two most frequent non-stopword tokens, ties broken by first
    /// appearance.
    pub fn frequent_tokens(subjects: &[String], max: usize) -> Vec<String> {
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        let mut order = 0usize;
        for s in subjects {
            for t in tokenize(s) {
                if STOPWORDS.contains(&t.as_str()) {
                    continue;
                }
                let e = counts.entry(t).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                e.0 += 1;
            }
        }
        let mut ranked: Vec<(String, (usize, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        ranked.into_iter().take(max).map(|(t, _)| t).collect()
    }
}

impl TextGenerator for TemplateMock {
    fn backend_id(&self) -> &str {
        "template-mock"
    }

    fn expand(&self, stage: Stage, ctx: &ExpansionLineage, n: usize, seed: u64) -> Result<Vec<String>> {
        Ok((0..n as u64)
            .map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "mock", j, 0));
                self.child(stage, ctx, &mut rng)
            })
            .collect())
    }

    fn compose(&self, ctx: &ExpansionLineage, seed: u64) -> Result<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prep = if rng.gen_bool(0.5) { "at" } else { "in" };
        Ok(format!(
            "{} {prep} {}, {}",
            ctx.subject_caption, ctx.location_caption, ctx.idea_caption
        ))
    }

    fn annotate(&self, prompt: &str, ctx: &ExpansionLineage, seed: u64) -> Result<AnnotationSet> {
        let tokens = tokenize(prompt);
        let lighting = LIGHTING_RULES
            .iter()
            .find(|(kw, _)| tokens.iter().any(|t| t == kw))
            .map(|(_, v)| *v)
            .unwrap_or_else(|| pick_by_hash(seed, "lighting", LIGHTING));
        let or_prompt = |s: &str| if s.trim().is_empty() { prompt.to_owned() } else { s.to_owned() };
        Ok(AnnotationSet {
            location: or_prompt(&ctx.location_caption),
            subject: or_prompt(&ctx.subject_caption),
            lighting: lighting.to_owned(),
            tone: pick_by_hash(seed, "tone", TONES).to_owned(),
            mood: pick_by_hash(seed, "mood", MOODS).to_owned(),
            genre: pick_by_hash(seed, "genre", GENRES).to_owned(),
        })
    }

    fn label(&self, subjects: &[String], _seed: u64) -> Result<String> {
        let top = Self::frequent_tokens(subjects, 2);
        Ok(if top.is_empty() { "untitled".to_owned() } else { top.join(" ") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{annotate_prompt, compose_prompt};

    #[test]
    fn expansions_are_deterministic_and_sized() {
        let ctx = ExpansionLineage {
            category: "medieval castles".into(),
            subcategory: "ancient medieval castles".into(),
            ..Default::default()
        };
        let m = TemplateMock;
        let a = m.expand(Stage::Idea, &ctx, 20, 5).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a, m.expand(Stage::Idea, &ctx, 20, 5).unwrap());
        assert!(a.iter().all(|s| s.ends_with("ancient castles")));
    }

    #[test]
    fn compose_contains_all_fragments() {
        let p = compose_prompt(
            &TemplateMock,
            "golden sunset shining on a golf course",
            "golf course overlooking Palm Springs",
            "golfer playing during a golden sunset",
            3,
        )
        .unwrap();
        for frag in [
            "golden sunset shining on a golf course",
            "golf course overlooking Palm Springs",
            "golfer playing during a golden sunset",
        ] {
            assert!(p.contains(frag), "{p}");
        }
        assert!(!p.contains('.') && !p.contains('\n'));
    }

    #[test]
    fn compose_rejects_empty_subject() {
        assert!(compose_prompt(&TemplateMock, "idea", "place", " ", 0).is_err());
    }

    #[test]
    fn sunset_means_golden_hour() {
        let a = annotate_prompt(&TemplateMock, "a castle at sunset", &ExpansionLineage::default(), 9).unwrap();
        assert_eq!(a.lighting, "golden hour");
        assert!(a.is_complete());
        let b = annotate_prompt(&TemplateMock, "a castle at sunset", &ExpansionLineage::default(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn label_uses_frequent_tokens() {
        let m = TemplateMock;
        assert_eq!(m.label(&vec!["dragon".to_string(); 20], 0).unwrap(), "dragon");
        let subjects: Vec<String> = ["the red dragon", "a red dragon flying", "red fox"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(m.label(&subjects, 0).unwrap(), "red dragon");
    }
}
