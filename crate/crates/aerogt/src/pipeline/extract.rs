use aerogt_core::cloud::{
    classify_roofs, complete_facades, eigen_features, segment_ground, supervoxel_segment, voxel_downsample, FacadeConfig,
    GroundLookup, Label, Plane, PointCloud,
};
use aerogt_core::registration::{IcpTarget, RegistrationError};
use rayon::prelude::*;

use super::{PipelineConfig, PipelineError};

/// Ground, roofs and completed façades from the airborne cloud.
#[derive(Debug, Clone)]
pub struct AlsProducts {
    pub ground: PointCloud,
    pub roofs: PointCloud,
    pub facades: PointCloud,
    pub ground_plane: Plane,
    pub roof_regions: usize,
}

fn extract_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Extract(e.to_string())
}

/// `ALS spacing / 2` is the mean inset of a gridded roof's hull from the
/// true roof edge; the hull is grown by that much before extrusion.
pub fn extract_als(als: &PointCloud, als_spacing: f64, cfg: &PipelineConfig) -> Result<AlsProducts, PipelineError> {
    let mut cloud = als.clone();
    cloud.clear_labels();
    let featured = eigen_features(&cloud, cfg.normal_radius).map_err(extract_err)?;
    let seg = segment_ground(&featured).map_err(extract_err)?;
    let mut is_ground = vec![false; cloud.len()];
    for &i in &seg.ground {
        is_ground[i] = true;
    }
    let rest: Vec<usize> = (0..cloud.len()).filter(|&i| !is_ground[i]).collect();
    let ground = PointCloud::uniform(seg.ground.iter().map(|&i| cloud.points()[i]).collect(), Label::Ground);
    let above = featured.select(&rest);
    let (roofs, facades, roof_regions) = if above.is_empty() {
        (PointCloud::default(), PointCloud::default(), 0)
    } else {
        let regions = supervoxel_segment(&above, cfg.roof_seed_resolution).map_err(extract_err)?;
        let roofs = classify_roofs(&regions);
        let lookup = GroundLookup::new(ground.points(), 5.0);
        let plane = seg.plane.clone();
        let plane_z = move |x: f64, y: f64| -(plane.normal.x * x + plane.normal.y * y + plane.offset) / plane.normal.z;
        let fc = FacadeConfig { edge_spacing: cfg.facade_spacing, vertical_spacing: cfg.facade_spacing, hull_dilation: als_spacing * 0.5 };
        let done = complete_facades(&above, &roofs, |x, y| lookup.elevation(x, y).unwrap_or_else(|| plane_z(x, y)), &fc);
        let members: Vec<usize> = roofs.iter().flat_map(|r| r.members.iter().copied()).collect();
        let roof_cloud = PointCloud::uniform(members.iter().map(|&m| above.points()[m]).collect(), Label::Roof);
        (roof_cloud, done.facades, roofs.len())
    };
    Ok(AlsProducts { ground, roofs, facades, ground_plane: seg.plane, roof_regions })
}

/// Normals computed within each class so walls and ground do not blend.
pub fn normals_by_class(cloud: &PointCloud, radius: f64) -> Result<PointCloud, PipelineError> {
    let labels = cloud.labels().ok_or_else(|| extract_err("cloud is unlabeled"))?;
    let (mut points, mut classes, mut normals) = (Vec::new(), Vec::new(), Vec::new());
    for class in [Label::Ground, Label::Roof, Label::Facade, Label::Other] {
        let idx: Vec<usize> = (0..cloud.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        let part = eigen_features(&cloud.select(&idx), radius).map_err(extract_err)?;
        points.extend_from_slice(part.points());
        normals.extend_from_slice(part.normals().expect("features"));
        classes.resize(points.len(), class);
    }
    let mut out = PointCloud::labeled(points, classes).map_err(extract_err)?;
    out.set_normals(normals).map_err(extract_err)?;
    Ok(out)
}

/// ICP target of ALS ground (thinned) and façades with per-class normals.
pub fn als_target(products: &AlsProducts, cfg: &PipelineConfig) -> Result<IcpTarget, PipelineError> {
    let mut union = voxel_downsample(&products.ground, cfg.als_target_voxel);
    union.append(&products.facades);
    let with_normals = normals_by_class(&union, cfg.normal_radius)?;
    IcpTarget::new(&with_normals, cfg.icp.max_correspondence_distance.max(0.5)).map_err(|e: RegistrationError| extract_err(e))
}

/// Thins each scan and labels ground versus everything else.
pub fn label_scans(scans: &[PointCloud], cfg: &PipelineConfig) -> Result<Vec<PointCloud>, PipelineError> {
    scans
        .par_iter()
        .map(|scan| {
            let thin = voxel_downsample(scan, cfg.scan_voxel);
            let seg = segment_ground(&thin).map_err(extract_err)?;
            let mut labels = vec![Label::Other; thin.len()];
            for &i in &seg.ground {
                labels[i] = Label::Ground;
            }
            let mut out = PointCloud::new(thin.points().to_vec());
            out.set_labels(labels).map_err(extract_err)?;
            Ok(out)
        })
        .collect()
}
