//! Three-layer business-relationship network.
//!
//! Companies are linked through shared knowledge items: location (province,
//! city), people (top investors, managers) and business (industry,
//! concepts). The network keeps only the company/item incidence; the
//! company-company edges of each layer are implied by shared items and
//! derived on demand.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CompanyProfile, InstrumentId, PersonIdentity};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KnowledgeError {
    #[error("unknown instrument {0}")]
    UnknownInstrument(InstrumentId),
    #[error("unknown knowledge item {0}")]
    UnknownItem(String),
    #[error("invalid knowledge item: {0}")]
    InvalidItem(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Location,
    Human,
    Business,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::Location, Layer::Human, Layer::Business];

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Location => "location",
            Layer::Human => "human",
            Layer::Business => "business",
        }
    }
}

impl FromStr for Layer {
    type Err = KnowledgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Layer::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| KnowledgeError::InvalidItem(format!("layer `{s}`")))
    }
}

/// The six attribute kinds; each belongs to exactly one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Province,
    City,
    Investor,
    Manager,
    Industry,
    Concept,
}

impl Attribute {
    pub const ALL: [Attribute; 6] = [
        Attribute::Province,
        Attribute::City,
        Attribute::Investor,
        Attribute::Manager,
        Attribute::Industry,
        Attribute::Concept,
    ];

    pub fn layer(self) -> Layer {
        match self {
            Attribute::Province | Attribute::City => Layer::Location,
            Attribute::Investor | Attribute::Manager => Layer::Human,
            Attribute::Industry | Attribute::Concept => Layer::Business,
        }
    }

    /// Primary attributes: province, investor, industry.
    pub fn is_primary(self) -> bool {
        matches!(
            self,
            Attribute::Province | Attribute::Investor | Attribute::Industry
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Province => "province",
            Attribute::City => "city",
            Attribute::Investor => "investor",
            Attribute::Manager => "manager",
            Attribute::Industry => "industry",
            Attribute::Concept => "concept",
        }
    }

    pub fn is_person(self) -> bool {
        self.layer() == Layer::Human
    }
}

impl FromStr for Attribute {
    type Err = KnowledgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| KnowledgeError::InvalidItem(format!("attribute `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemValue {
    Text(String),
    Person(PersonIdentity),
}

/// One knowledge item, e.g. `(business, concept, "mask")`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KnowledgeItem {
    attribute: Attribute,
    value: ItemValue,
}

impl KnowledgeItem {
    pub fn text(attribute: Attribute, value: impl Into<String>) -> Result<Self, KnowledgeError> {
        let value = value.into();
        if attribute.is_person() {
            return Err(KnowledgeError::InvalidItem(format!(
                "{} items hold people, not text",
                attribute.as_str()
            )));
        }
        if value.trim().is_empty() {
            return Err(KnowledgeError::InvalidItem("empty value".into()));
        }
        Ok(Self {
            attribute,
            value: ItemValue::Text(value),
        })
    }

    pub fn person(attribute: Attribute, person: PersonIdentity) -> Result<Self, KnowledgeError> {
        if !attribute.is_person() {
            return Err(KnowledgeError::InvalidItem(format!(
                "{} items hold text, not people",
                attribute.as_str()
            )));
        }
        Ok(Self {
            attribute,
            value: ItemValue::Person(person),
        })
    }

    /// Parse from the `(layer, attribute, value)` triple used in URLs. People
    /// are written as `name@year` (or `name@?ticker` without a birth year).
    pub fn parse(layer: &str, attribute: &str, value: &str) -> Result<Self, KnowledgeError> {
        let layer: Layer = layer.parse()?;
        let attribute: Attribute = attribute.parse()?;
        if attribute.layer() != layer {
            return Err(KnowledgeError::InvalidItem(format!(
                "{} is not a {} attribute",
                attribute.as_str(),
                layer.as_str()
            )));
        }
        if attribute.is_person() {
            let person = PersonIdentity::parse_key(value)
                .ok_or_else(|| KnowledgeError::InvalidItem(format!("person key `{value}`")))?;
            Self::person(attribute, person)
        } else {
            Self::text(attribute, value)
        }
    }

    pub fn layer(&self) -> Layer {
        self.attribute.layer()
    }

    pub fn attribute(&self) -> Attribute {
        self.attribute
    }

    pub fn value(&self) -> &ItemValue {
        &self.value
    }

    /// Value as written in URLs and UIs.
    pub fn value_key(&self) -> String {
        match &self.value {
            ItemValue::Text(t) => t.clone(),
            ItemValue::Person(p) => p.key(),
        }
    }
}

impl fmt::Display for KnowledgeItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.layer().as_str(),
            self.attribute.as_str(),
            self.value_key()
        )
    }
}

#[derive(Serialize, Deserialize)]
struct ItemWire {
    layer: Layer,
    attribute: Attribute,
    value: String,
}

impl Serialize for KnowledgeItem {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ItemWire {
            layer: self.layer(),
            attribute: self.attribute,
            value: self.value_key(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for KnowledgeItem {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = ItemWire::deserialize(d)?;
        KnowledgeItem::parse(wire.layer.as_str(), wire.attribute.as_str(), &wire.value)
            .map_err(serde::de::Error::custom)
    }
}

/// Items a profile contributes, across all three layers.
pub fn profile_items(profile: &CompanyProfile) -> BTreeSet<KnowledgeItem> {
    let mut items = BTreeSet::new();
    let mut text = |attr, value: &str| {
        if let Ok(item) = KnowledgeItem::text(attr, value.trim()) {
            items.insert(item);
        }
    };
    text(Attribute::Province, &profile.province);
    text(Attribute::City, &profile.city);
    text(Attribute::Industry, &profile.industry);
    for c in &profile.concepts {
        text(Attribute::Concept, c);
    }
    for p in &profile.top_investors {
        items.insert(KnowledgeItem {
            attribute: Attribute::Investor,
            value: ItemValue::Person(p.clone()),
        });
    }
    for p in &profile.managers {
        items.insert(KnowledgeItem {
            attribute: Attribute::Manager,
            value: ItemValue::Person(p.clone()),
        });
    }
    items
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MultiLayerNetwork {
    items_of: BTreeMap<InstrumentId, BTreeSet<KnowledgeItem>>,
    holders_of: BTreeMap<KnowledgeItem, BTreeSet<InstrumentId>>,
}

/// Ego-centric search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoResult {
    pub ego: InstrumentId,
    pub segments: Vec<Segment>,
    /// Most shared items first, ties by ticker.
    pub neighbors: Vec<Neighbor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub item: KnowledgeItem,
    pub holder_count: usize,
    /// Share of the item's layer arc, see [`layer_segment_widths`].
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub instrument: InstrumentId,
    pub shared_items: BTreeSet<KnowledgeItem>,
    /// Equals the number of shared items; ring 1 is the outermost.
    pub ring: usize,
}

impl MultiLayerNetwork {
    pub fn build(profiles: &[CompanyProfile]) -> Self {
        let mut net = Self::default();
        for p in profiles {
            let items = profile_items(p);
            for item in &items {
                net.holders_of
                    .entry(item.clone())
                    .or_default()
                    .insert(p.instrument.clone());
            }
            net.items_of
                .entry(p.instrument.clone())
                .or_default()
                .extend(items);
        }
        net
    }

    pub fn companies(&self) -> impl Iterator<Item = &InstrumentId> {
        self.items_of.keys()
    }

    pub fn company_count(&self) -> usize {
        self.items_of.len()
    }

    pub fn contains(&self, id: &InstrumentId) -> bool {
        self.items_of.contains_key(id)
    }

    pub fn has_item(&self, item: &KnowledgeItem) -> bool {
        self.holders_of.contains_key(item)
    }

    pub fn items(&self) -> impl Iterator<Item = &KnowledgeItem> {
        self.holders_of.keys()
    }

    pub fn items_of(&self, id: &InstrumentId) -> Option<&BTreeSet<KnowledgeItem>> {
        self.items_of.get(id)
    }

    pub fn holders_of(&self, item: &KnowledgeItem) -> Option<&BTreeSet<InstrumentId>> {
        self.holders_of.get(item)
    }

    pub fn holds(&self, id: &InstrumentId, item: &KnowledgeItem) -> bool {
        self.holders_of.get(item).is_some_and(|h| h.contains(id))
    }

    /// Implied company-company edges in a layer: one per pair of holders of
    /// each item, counted per item.
    pub fn implied_edge_count(&self, layer: Layer) -> u64 {
        self.holders_of
            .iter()
            .filter(|(item, _)| item.layer() == layer)
            .map(|(_, h)| {
                let n = h.len() as u64;
                n * n.saturating_sub(1) / 2
            })
            .sum()
    }

    /// Holders of `item`, sorted by ticker; empty for an unknown item.
    pub fn companies_with_item(&self, item: &KnowledgeItem) -> Vec<InstrumentId> {
        self.holders_of
            .get(item)
            .map(|h| h.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn ego_search(&self, ego: &InstrumentId) -> Result<EgoResult, KnowledgeError> {
        let items = self
            .items_of
            .get(ego)
            .ok_or_else(|| KnowledgeError::UnknownInstrument(ego.clone()))?;
        let mut segments: Vec<Segment> = items
            .iter()
            .map(|item| Segment {
                item: item.clone(),
                holder_count: self.holders_of[item].len(),
                width: 0.0,
            })
            .collect();
        for layer in Layer::ALL {
            let idx: Vec<usize> = (0..segments.len())
                .filter(|&k| segments[k].item.layer() == layer)
                .collect();
            let counts: Vec<usize> = idx.iter().map(|&k| segments[k].holder_count).collect();
            for (&k, w) in idx.iter().zip(layer_segment_widths(&counts)) {
                segments[k].width = w;
            }
        }

        let mut shared: BTreeMap<&InstrumentId, BTreeSet<KnowledgeItem>> = BTreeMap::new();
        for item in items {
            for holder in &self.holders_of[item] {
                if holder != ego {
                    shared.entry(holder).or_default().insert(item.clone());
                }
            }
        }
        let mut neighbors: Vec<Neighbor> = shared
            .into_iter()
            .map(|(id, shared_items)| Neighbor {
                instrument: id.clone(),
                ring: shared_items.len(),
                shared_items,
            })
            .collect();
        neighbors.sort_by(|a, b| {
            b.ring
                .cmp(&a.ring)
                .then_with(|| a.instrument.cmp(&b.instrument))
        });
        Ok(EgoResult {
            ego: ego.clone(),
            segments,
            neighbors,
        })
    }
}

/// Unnormalized arc weight of an item held by `item_count` companies in a
/// layer whose counts total `layer_total`: `ln(1 + total / count)`.
pub fn segment_width(item_count: usize, layer_total: usize) -> f64 {
    debug_assert!(item_count >= 1 && item_count <= layer_total);
    (1.0 + layer_total as f64 / item_count.max(1) as f64).ln()
}

/// Widths for one layer's segments, normalized to sum to 1. Rarer items get
/// wider arcs.
pub fn layer_segment_widths(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    let raw: Vec<f64> = counts.iter().map(|&c| segment_width(c, total)).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|w| w / sum).collect()
}
