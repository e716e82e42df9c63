//! Removal instructions: `"remove the [attribute] <name> [relation phrase]"`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ForgeError, Result};
use crate::relations::{relation_phrase, RetainedPredicates};
use crate::scene_graph::{ImageId, ObjectId, ObjectNode, Relation, SceneGraph};
use crate::selection::{SelectionVerdict, Selector};

pub const INSTRUCTION_PREFIX: &str = "remove the ";
pub const DEFAULT_ATTRIBUTE_PROBABILITY: f64 = 0.5;

/// With probability `p_use`, one attribute of `node` chosen uniformly.
///
/// Nodes without attributes never consume randomness.
pub fn attribute_augment<R: Rng + ?Sized>(node: &ObjectNode, rng: &mut R, p_use: f64) -> Option<String> {
    if node.attributes.is_empty() || !rng.random_bool(p_use) {
        return None;
    }
    let i = rng.random_range(0..node.attributes.len());
    Some(node.attributes[i].clone())
}

/// Seed for one (image, object) record. Independent of processing order.
pub fn record_seed(global_seed: u64, image_id: &ImageId, object_id: &ObjectId) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update(image_id.as_str().as_bytes());
    hasher.update([0u8]);
    hasher.update(object_id.as_str().as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// The three slots of the instruction template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionParts {
    pub attribute: Option<String>,
    pub name: String,
    pub relation_phrase: Option<String>,
}

impl InstructionParts {
    pub fn render(&self) -> String {
        let mut out = String::from(INSTRUCTION_PREFIX);
        if let Some(attr) = &self.attribute {
            out.push_str(attr);
            out.push(' ');
        }
        out.push_str(&self.name);
        if let Some(phrase) = &self.relation_phrase {
            out.push(' ');
            out.push_str(phrase);
        }
        out
    }

    /// Recover the slots of an instruction whose object name is known.
    ///
    /// The first occurrence of `name` delimited by spaces splits the text:
    /// anything before it is the attribute, anything after the phrase.
    pub fn parse(text: &str, name: &str) -> Option<InstructionParts> {
        let rest = text.strip_prefix(INSTRUCTION_PREFIX)?;
        if name.is_empty() {
            return None;
        }
        let mut start = 0;
        while let Some(offset) = rest[start..].find(name) {
            let at = start + offset;
            let end = at + name.len();
            let before_ok = at == 0 || rest[..at].ends_with(' ');
            let after_ok = end == rest.len() || rest[end..].starts_with(' ');
            if before_ok && after_ok {
                let attribute = (at > 0).then(|| rest[..at - 1].to_owned());
                let relation_phrase = (end < rest.len()).then(|| rest[end + 1..].to_owned());
                if attribute.as_deref() == Some("") || relation_phrase.as_deref() == Some("") {
                    return None;
                }
                return Some(InstructionParts {
                    attribute,
                    name: name.to_owned(),
                    relation_phrase,
                });
            }
            start = at + 1;
        }
        None
    }
}

/// A generated instruction and what went into it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSpec {
    pub object_id: ObjectId,
    pub instruction: String,
    pub used_relations: Vec<Relation>,
    pub used_attribute: Option<String>,
    pub relation_phrase: Option<String>,
    pub rng_seed: u64,
}

impl InstructionSpec {
    pub fn parts(&self, name: &str) -> InstructionParts {
        InstructionParts {
            attribute: self.used_attribute.clone(),
            name: name.to_owned(),
            relation_phrase: self.relation_phrase.clone(),
        }
    }
}

/// Build the instruction for a removable `target`.
///
/// A class with a single instance in the image gets the bare template;
/// otherwise the relation phrase (or the spatial fallback) disambiguates it.
/// Attribute slots draw independently from one RNG seeded with `seed`: the
/// target first, then each relation target in phrase order.
pub fn build_instruction(
    target: &ObjectNode,
    graph: &SceneGraph,
    selector: &Selector,
    retained: &RetainedPredicates,
    seed: u64,
    attribute_probability: f64,
) -> Result<InstructionSpec> {
    let verdict = selector.classify(target, graph);
    if verdict != SelectionVerdict::Removable {
        return Err(ForgeError::Contract(format!(
            "object {} ('{}') is {}, not removable",
            target.id,
            target.name,
            verdict.as_str()
        )));
    }
    if !(0.0..=1.0).contains(&attribute_probability) {
        return Err(ForgeError::InvalidParameter(format!(
            "attribute probability {attribute_probability} outside [0, 1]"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attribute = attribute_augment(target, &mut rng, attribute_probability);
    let (phrase, used_relations) = if graph.objects_of_name(&target.name).len() > 1 {
        let phrase = relation_phrase(target, graph, retained, &mut rng, attribute_probability);
        (Some(phrase.text), phrase.used)
    } else {
        (None, Vec::new())
    };

    let parts = InstructionParts {
        attribute: attribute.clone(),
        name: target.name.clone(),
        relation_phrase: phrase.clone(),
    };
    Ok(InstructionSpec {
        object_id: target.id.clone(),
        instruction: parts.render(),
        used_relations,
        used_attribute: attribute,
        relation_phrase: phrase,
        rng_seed: seed,
    })
}
