//! Reference prompt pairs, the meta-prompt template and the vocabulary the
//! offline client draws from.

use super::{parse_prompt_batch, PromptBatch, BATCH_SIZE_RANGE};

pub const REFERENCE_PROMPTS_JSON: &str = include_str!("../../fixtures/reference_prompts.json");

/// Hand-written prompt pairs for stairs and hurdle scenes.
pub fn reference_batch() -> PromptBatch {
    parse_prompt_batch(REFERENCE_PROMPTS_JSON).expect("bundled reference prompts are valid")
}

/// A request to a language model for a batch of image prompts: a title
/// block, scene details, and the structured-output instructions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPrompt {
    pub title: String,
    pub details: Vec<String>,
    pub min_pairs: usize,
    pub max_pairs: usize,
}

impl MetaPrompt {
    pub fn new(title: impl Into<String>, details: Vec<String>) -> Self {
        Self { title: title.into(), details, min_pairs: *BATCH_SIZE_RANGE.start(), max_pairs: *BATCH_SIZE_RANGE.end() }
    }

    /// A meta prompt for one terrain family (`"stairs"`, `"hurdles"`, ...).
    pub fn for_site(site: &str) -> Self {
        Self::new(
            format!("Image prompts for {site} scenes"),
            vec![
                format!("Each image shows {site} seen from a low camera close to the ground."),
                "The foreground prompt describes the material of the obstacle surfaces.".into(),
                "The background prompt describes the surroundings: buildings, vegetation, people, sky.".into(),
                "Vary the weather, time of day, lighting and location across prompts.".into(),
            ],
        )
    }

    pub fn render(&self) -> String {
        let mut s = format!("# {}\n\n", self.title);
        for d in &self.details {
            s.push_str("- ");
            s.push_str(d);
            s.push('\n');
        }
        s.push_str(&format!(
            "\nWrite between {} and {} prompt pairs. Reply with JSON only, in this form:\n\
             {{\"pairs\": [{{\"id\": \"short-slug\", \"foreground\": \"...\", \"background\": \"...\", \
             \"tags\": {{\"weather\": \"...\", \"time_of_day\": \"...\", \"lighting\": \"...\", \"site\": \"...\"}}}}]}}\n",
            self.min_pairs, self.max_pairs
        ));
        s
    }
}

pub(crate) const MATERIALS: &[&str] = &[
    "Weathered oak planks with deep grain and worn, rounded edges",
    "Rough-cast concrete with shallow pits and faint formwork lines",
    "Red clay bricks laid in a running bond, mortar slightly recessed",
    "Polished black marble veined with thin streaks of white",
    "Moss-covered fieldstone blocks, damp and uneven",
    "Corrugated steel sheets with patches of orange rust",
    "Sandstone slabs in warm ochre tones, softly eroded",
    "Glazed ceramic tiles in cobalt and white geometric patterns",
    "Scuffed rubber matting with a raised diamond tread",
    "Painted plywood boxes in faded primary colors",
    "Terracotta pavers with chipped corners and salt bloom",
    "Brushed aluminum panels reflecting diffuse light",
];

pub(crate) const SURFACE_DETAILS: &[&str] = &[
    "scattered with fallen leaves",
    "stained by years of rain",
    "dusted with fine sand",
    "marked with chalk scribbles",
    "edged with thin strips of grass",
    "still wet from a passing shower",
];

pub(crate) const SETTINGS: &[&str] = &[
    "a narrow lane between whitewashed houses with blue shutters",
    "a university quad bordered by ivy-covered brick halls",
    "a quiet harbor front with stacked crates and moored fishing boats",
    "a market street lined with fruit stalls and striped awnings",
    "a mountain trail flanked by pine trees and granite outcrops",
    "an industrial yard with loading docks and chain-link fences",
    "a city park with benches, lamp posts and a gravel path",
    "a temple courtyard with carved wooden gates and stone lanterns",
    "a suburban backyard with a wooden fence and flower beds",
    "a plaza in front of a glass office tower",
];

pub(crate) const WEATHER: &[&str] = &["clear", "overcast", "light rain", "fog", "snow flurries", "windy"];
pub(crate) const TIME_OF_DAY: &[&str] = &["early morning", "midday", "late afternoon", "dusk", "night"];
pub(crate) const LIGHTING: &[&str] = &[
    "soft diffuse light",
    "hard shadows from low sun",
    "warm streetlights",
    "cool blue ambient light",
    "dappled light through foliage",
];
pub(crate) const SITES: &[&str] = &["stairs", "hurdles", "gaps", "flat"];
