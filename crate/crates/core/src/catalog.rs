//! Traffic-sign classes, pictogram design groups and the asset catalog.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Rgba;

pub const NUM_CLASSES: usize = 24;
pub const ASSET_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Prohibitory,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignShape {
    Round,
    Triangular,
}

impl Category {
    pub fn shape(self) -> SignShape {
        match self {
            Category::Prohibitory => SignShape::Round,
            Category::Warning => SignShape::Triangular,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrafficSignClass {
    pub id: u8,
    /// Short display name.
    pub name: &'static str,
    /// ASCII file stem used in the asset tree.
    pub file_stem: &'static str,
    pub category: Category,
}

impl TrafficSignClass {
    pub fn shape(&self) -> SignShape {
        self.category.shape()
    }
}

macro_rules! class {
    ($id:expr, $name:expr, $stem:expr, $cat:ident) => {
        TrafficSignClass {
            id: $id,
            name: $name,
            file_stem: $stem,
            category: Category::$cat,
        }
    };
}

/// The 24 classes: 18 prohibitory followed by 6 warning signs.
pub const CLASSES: [TrafficSignClass; NUM_CLASSES] = [
    class!(0, "Axle weight", "Axle_weight", Prohibitory),
    class!(1, "Trailer", "Trailer", Prohibitory),
    class!(2, "Truck trailer", "Truck_trailer", Prohibitory),
    class!(3, "Truck", "Truck", Prohibitory),
    class!(4, "Truck weight", "Truck_weight", Prohibitory),
    class!(5, "Omnibus", "Omnibus", Prohibitory),
    class!(6, "Motorcycle", "Motorcycle", Prohibitory),
    class!(7, "Moped", "Moped", Prohibitory),
    class!(8, "Cycle", "Cycle", Prohibitory),
    class!(9, "Cycle & Moped", "Cycle_and_Moped", Prohibitory),
    class!(10, "Power-driven", "Power_driven", Prohibitory),
    class!(11, "Single-tracked", "Single_tracked", Prohibitory),
    class!(12, "Riding", "Riding", Prohibitory),
    class!(13, "Animal-drawn", "Animal_drawn", Prohibitory),
    class!(14, "Overtaking", "Overtaking", Prohibitory),
    class!(15, "Truck overtaking", "Truck_overtaking", Prohibitory),
    class!(16, "Dangerous goods", "Dangerous_goods", Prohibitory),
    class!(17, "Pedestrian", "Pedestrian", Prohibitory),
    class!(18, "Road works", "Road_works", Warning),
    class!(19, "Children", "Children", Warning),
    class!(20, "Pedestrian crossing", "Pedestrian_crossing", Warning),
    class!(21, "Cyclist crossing", "Cyclist_crossing", Warning),
    class!(22, "Slippery", "Slippery", Warning),
    class!(23, "Wrong way driver", "Wrong_way_driver", Warning),
];

/// German pictograms that do not officially exist and were assembled by hand.
pub const HANDCRAFTED_DE: [u8; 4] = [1, 4, 21, 23];

pub fn class_by_id(id: u8) -> Result<&'static TrafficSignClass, CatalogError> {
    CLASSES.get(usize::from(id)).ok_or(CatalogError::UnknownClass(id))
}

pub fn class_by_name(name: &str) -> Option<&'static TrafficSignClass> {
    CLASSES
        .iter()
        .find(|c| c.name.eq_ignore_ascii_case(name) || c.file_stem.eq_ignore_ascii_case(name))
}

/// A single pictogram design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Design {
    /// Current Austrian pictograms.
    ATc,
    /// Proposed new Austrian pictograms.
    ATn,
    /// Current German pictograms.
    DE,
}

impl Design {
    pub const ALL: [Design; 3] = [Design::ATc, Design::ATn, Design::DE];

    pub fn tag(self) -> &'static str {
        match self {
            Design::ATc => "ATc",
            Design::ATn => "ATn",
            Design::DE => "DE",
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A base design or a composite of several, used for mixed-design training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DesignGroup {
    Base(Design),
    /// ATc and DE: every pictogram currently on the road.
    Cur,
    /// ATc, ATn and DE.
    All,
}

impl DesignGroup {
    pub fn members(self) -> BTreeSet<Design> {
        match self {
            DesignGroup::Base(d) => BTreeSet::from([d]),
            DesignGroup::Cur => BTreeSet::from([Design::ATc, Design::DE]),
            DesignGroup::All => Design::ALL.into_iter().collect(),
        }
    }

    pub fn is_composite(self) -> bool {
        !matches!(self, DesignGroup::Base(_))
    }

    pub fn tag(self) -> &'static str {
        match self {
            DesignGroup::Base(d) => d.tag(),
            DesignGroup::Cur => "CUR",
            DesignGroup::All => "ALL",
        }
    }

    /// Recognize a composite from its member set, regardless of order.
    pub fn from_members(members: &BTreeSet<Design>) -> Option<DesignGroup> {
        [
            DesignGroup::Base(Design::ATc),
            DesignGroup::Base(Design::ATn),
            DesignGroup::Base(Design::DE),
            DesignGroup::Cur,
            DesignGroup::All,
        ]
        .into_iter()
        .find(|g| &g.members() == members)
    }
}

impl From<Design> for DesignGroup {
    fn from(d: Design) -> Self {
        DesignGroup::Base(d)
    }
}

impl fmt::Display for DesignGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for DesignGroup {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ATC" | "AT_C" => Ok(DesignGroup::Base(Design::ATc)),
            "ATN" | "AT_N" => Ok(DesignGroup::Base(Design::ATn)),
            "DE" => Ok(DesignGroup::Base(Design::DE)),
            "CUR" => Ok(DesignGroup::Cur),
            "ALL" => Ok(DesignGroup::All),
            _ => Err(CatalogError::UnknownDesign(s.to_string())),
        }
    }
}

impl FromStr for Design {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.parse::<DesignGroup>()? {
            DesignGroup::Base(d) => Ok(d),
            _ => Err(CatalogError::CompositeDesignNotAddressable(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Official,
    Handcrafted,
}

pub fn provenance_of(class_id: u8, design: Design) -> Provenance {
    if design == Design::DE && HANDCRAFTED_DE.contains(&class_id) {
        Provenance::Handcrafted
    } else {
        Provenance::Official
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PictogramAsset {
    pub class_id: u8,
    pub design: Design,
    /// 100x100 RGBA; alpha marks pictogram ink.
    pub raster: Rgba,
    pub provenance: Provenance,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("missing asset for class {class} ({design}) at {path}")]
    MissingAsset {
        class: String,
        design: Design,
        path: PathBuf,
    },
    #[error("asset {path} is {width}x{height}, expected 100x100")]
    BadDimensions {
        path: PathBuf,
        width: usize,
        height: usize,
    },
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("unknown class id {0}")]
    UnknownClass(u8),
    #[error("unknown design tag {0:?}")]
    UnknownDesign(String),
    #[error("composite design {0} cannot address a single asset")]
    CompositeDesignNotAddressable(String),
}

/// All pictograms, indexed by (class, design).
#[derive(Debug, Clone)]
pub struct Catalog {
    assets: Vec<PictogramAsset>,
}

impl Catalog {
    /// Build a catalog from in-memory rasters, ordered by (class, design).
    pub fn from_assets(mut assets: Vec<PictogramAsset>) -> Result<Self, CatalogError> {
        assets.sort_by_key(|a| (a.class_id, a.design));
        for class in &CLASSES {
            for design in Design::ALL {
                if !assets.iter().any(|a| a.class_id == class.id && a.design == design) {
                    return Err(CatalogError::MissingAsset {
                        class: class.name.to_string(),
                        design,
                        path: asset_path(Path::new(""), class, design),
                    });
                }
            }
        }
        for a in &assets {
            if a.raster.width() != ASSET_SIZE || a.raster.height() != ASSET_SIZE {
                return Err(CatalogError::BadDimensions {
                    path: asset_path(Path::new(""), class_by_id(a.class_id)?, a.design),
                    width: a.raster.width(),
                    height: a.raster.height(),
                });
            }
        }
        Ok(Catalog { assets })
    }

    pub fn assets(&self) -> &[PictogramAsset] {
        &self.assets
    }

    pub fn lookup(&self, class_id: u8, design: DesignGroup) -> Result<&PictogramAsset, CatalogError> {
        class_by_id(class_id)?;
        let DesignGroup::Base(design) = design else {
            return Err(CatalogError::CompositeDesignNotAddressable(design.tag().to_string()));
        };
        self.assets
            .iter()
            .find(|a| a.class_id == class_id && a.design == design)
            .ok_or(CatalogError::UnknownClass(class_id))
    }
}

pub fn asset_path(root: &Path, class: &TrafficSignClass, design: Design) -> PathBuf {
    root.join(design.tag()).join(format!("{}.png", class.file_stem))
}

/// Load `<root>/<ATc|ATn|DE>/<class>.png` for all 72 (class, design) pairs.
pub fn load_catalog(asset_root: &Path) -> Result<Catalog, CatalogError> {
    let mut assets = Vec::with_capacity(NUM_CLASSES * 3);
    for class in &CLASSES {
        for design in Design::ALL {
            let path = asset_path(asset_root, class, design);
            if !path.is_file() {
                return Err(CatalogError::MissingAsset {
                    class: class.name.to_string(),
                    design,
                    path,
                });
            }
            let raster = Rgba::load_png(&path).map_err(|e| CatalogError::UnreadableImage {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            if raster.width() != ASSET_SIZE || raster.height() != ASSET_SIZE {
                return Err(CatalogError::BadDimensions {
                    path,
                    width: raster.width(),
                    height: raster.height(),
                });
            }
            assets.push(PictogramAsset {
                class_id: class.id,
                design,
                raster,
                provenance: provenance_of(class.id, design),
            });
        }
    }
    Catalog::from_assets(assets)
}

/// Write every asset of `catalog` into the standard tree under `root`.
pub fn save_catalog(catalog: &Catalog, root: &Path) -> Result<(), crate::raster::RasterError> {
    for a in catalog.assets() {
        let class = &CLASSES[usize::from(a.class_id)];
        a.raster.save_png(&asset_path(root, class, a.design))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_table_matches_golden_fixture() {
        let golden = [
            "Axle weight",
            "Trailer",
            "Truck trailer",
            "Truck",
            "Truck weight",
            "Omnibus",
            "Motorcycle",
            "Moped",
            "Cycle",
            "Cycle & Moped",
            "Power-driven",
            "Single-tracked",
            "Riding",
            "Animal-drawn",
            "Overtaking",
            "Truck overtaking",
            "Dangerous goods",
            "Pedestrian",
            "Road works",
            "Children",
            "Pedestrian crossing",
            "Cyclist crossing",
            "Slippery",
            "Wrong way driver",
        ];
        for (i, (c, name)) in CLASSES.iter().zip(golden).enumerate() {
            assert_eq!(usize::from(c.id), i);
            assert_eq!(c.name, name);
            let expect = if i < 18 { Category::Prohibitory } else { Category::Warning };
            assert_eq!(c.category, expect);
            assert!(c.file_stem.is_ascii());
        }
        let prohib = CLASSES.iter().filter(|c| c.category == Category::Prohibitory).count();
        assert_eq!((prohib, NUM_CLASSES - prohib), (18, 6));
    }

    #[test]
    fn shape_follows_category() {
        for c in &CLASSES {
            match c.category {
                Category::Prohibitory => assert_eq!(c.shape(), SignShape::Round),
                Category::Warning => assert_eq!(c.shape(), SignShape::Triangular),
            }
        }
    }

    #[test]
    fn handcrafted_assets_are_the_four_missing_german_classes() {
        let names: Vec<_> = HANDCRAFTED_DE.iter().map(|i| CLASSES[*i as usize].name).collect();
        assert_eq!(names, ["Trailer", "Truck weight", "Cyclist crossing", "Wrong way driver"]);
        let n = CLASSES
            .iter()
            .flat_map(|c| Design::ALL.map(|d| provenance_of(c.id, d)))
            .filter(|p| *p == Provenance::Handcrafted)
            .count();
        assert_eq!(n, 4);
        assert_eq!(provenance_of(2, Design::DE), Provenance::Official);
        assert_eq!(provenance_of(21, Design::DE), Provenance::Handcrafted);
        assert_eq!(provenance_of(21, Design::ATc), Provenance::Official);
    }

    #[test]
    fn composite_groups_are_unordered_sets() {
        assert_eq!(DesignGroup::Cur.members(), BTreeSet::from([Design::DE, Design::ATc]));
        assert!(!DesignGroup::Cur.members().contains(&Design::ATn));
        let set: BTreeSet<_> = [Design::DE, Design::ATn, Design::ATc].into_iter().collect();
        assert_eq!(DesignGroup::from_members(&set), Some(DesignGroup::All));
        assert_eq!("cur".parse::<DesignGroup>().unwrap(), DesignGroup::Cur);
        assert!(matches!(
            "ALL".parse::<Design>(),
            Err(CatalogError::CompositeDesignNotAddressable(_))
        ));
    }
}
