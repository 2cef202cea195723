//! Desk-scale synthetic dataset: identities with one passport-style
//! reference and several probe captures, plus look-alike families for
//! hard-pair pretraining.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Gender, ImageKind, ImageRef, Manifest, SubjectRecord};
use crate::error::{Error, Result};
use crate::imaging::save_rgb;
use crate::synth::{probe_expression, probe_pose, reference_pose, render_face, Capture, Expression, Identity, CANVAS};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAMILY_MANIFEST_FILE: &str = "families_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestbedConfig {
    /// Identities of the morph dataset, alternating female and male.
    pub identities: usize,
    pub probes_per_identity: usize,
    /// Look-alike families (two members each) for pretraining.
    pub families: usize,
    pub images_per_family_member: usize,
    /// Geometric distance of a look-alike, 1.0 being unrelated identities.
    pub look_alike_strength: f64,
    pub seed: u64,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        TestbedConfig {
            identities: 80,
            probes_per_identity: 3,
            families: 40,
            images_per_family_member: 4,
            look_alike_strength: 0.5,
            seed: 0,
        }
    }
}

impl TestbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.identities < 4 || self.probes_per_identity == 0 {
            return Err(Error::Config("testbed needs at least 4 identities and one probe each".into()));
        }
        if self.families > 0 && self.images_per_family_member < 2 {
            return Err(Error::Config("family members need at least 2 images".into()));
        }
        if !(self.look_alike_strength > 0.0 && self.look_alike_strength <= 1.0) {
            return Err(Error::Config(format!("look_alike_strength must be in (0,1], got {}", self.look_alike_strength)));
        }
        Ok(())
    }
}

fn gender_of(i: usize) -> Gender {
    if i % 2 == 0 {
        Gender::Female
    } else {
        Gender::Male
    }
}

/// Renders one reference plus `n_probes` probes of `identity` under `dir`.
fn render_subject(root: &Path, dir: &str, identity: &Identity, n_probes: usize, rng: &mut ChaCha8Rng) -> Result<SubjectRecord> {
    let mut images = Vec::with_capacity(n_probes + 1);
    let reference = render_face(identity, reference_pose(rng), Expression::default(), &Capture::reference(rng), CANVAS, CANVAS);
    let path = format!("{dir}/reference.png");
    save_rgb(&reference.image, &root.join(&path))?;
    images.push(ImageRef::bona_fide(path, ImageKind::BonaFideReference, identity.id.clone()));
    for k in 0..n_probes {
        let pose = probe_pose(rng);
        let expr = probe_expression(rng);
        let capture = Capture::probe(rng);
        let probe = render_face(identity, pose, expr, &capture, CANVAS, CANVAS);
        let path = format!("{dir}/probe_{k}.png");
        save_rgb(&probe.image, &root.join(&path))?;
        images.push(ImageRef::bona_fide(path, ImageKind::BonaFideProbe, identity.id.clone()));
    }
    Ok(SubjectRecord {
        subject_id: identity.id.clone(),
        gender: identity.gender,
        images,
        family: None,
    })
}

/// Writes the images plus [`MANIFEST_FILE`] and, when families are
/// requested, [`FAMILY_MANIFEST_FILE`] under `root`.
pub fn generate_testbed(config: &TestbedConfig, root: &Path) -> Result<(Manifest, Option<Manifest>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut main = Manifest {
        name: "synthetic-morph-testbed".into(),
        subjects: Vec::new(),
        morphs: Vec::new(),
    };
    for i in 0..config.identities {
        let id = format!("s{i:03}");
        let identity = Identity::random(id.clone(), gender_of(i), &mut rng);
        main.subjects.push(render_subject(root, &format!("subjects/{id}"), &identity, config.probes_per_identity, &mut rng)?);
    }
    main.save(&root.join(MANIFEST_FILE))?;
    if config.families == 0 {
        return Ok((main, None));
    }
    let mut fam = Manifest {
        name: "synthetic-look-alike-families".into(),
        subjects: Vec::new(),
        morphs: Vec::new(),
    };
    for f in 0..config.families {
        let family = format!("f{f:03}");
        let first = Identity::random(format!("{family}a"), gender_of(f), &mut rng);
        let second = first.look_alike(format!("{family}b"), &mut rng, config.look_alike_strength);
        for member in [first, second] {
            let mut rec = render_subject(root, &format!("families/{}", member.id), &member, config.images_per_family_member - 1, &mut rng)?;
            rec.family = Some(family.clone());
            fam.subjects.push(rec);
        }
    }
    fam.save(&root.join(FAMILY_MANIFEST_FILE))?;
    Ok((main, Some(fam)))
}
