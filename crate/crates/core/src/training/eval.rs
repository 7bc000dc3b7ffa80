use crate::data::{crop_patch, reassemble, Mask, PatchLayout, Volume};
use crate::error::{Error, Result};
use crate::losses::{dice_metric, jaccard_metric};
use crate::networks::{Domain, ModelBundle, Translator};
use crate::tensor::{no_grad, Tensor};

/// Patches evaluated per forward pass during inference.
const INFER_BATCH: usize = 4;

/// Runs `f` over non-overlapping covering patches of the normalized volume
/// and averages the per-patch outputs back into a full volume.
fn patchwise(
    bundle: &ModelBundle,
    volume: &Volume,
    f: &dyn Fn(&Tensor) -> Result<Vec<Vec<f64>>>,
) -> Result<Volume> {
    let patch = bundle.config.patch;
    let layout = PatchLayout::covering(volume.dims, patch, patch).map_err(|e| match e {
        Error::Invalid(msg) => Error::Config(msg),
        e => e,
    })?;
    let norm = volume.normalized();
    let mut values = Vec::with_capacity(layout.origins.len());
    for chunk in layout.origins.chunks(INFER_BATCH) {
        let mut data = Vec::new();
        for &o in chunk {
            data.extend(crop_patch(&norm, None, o, patch).volume.voxels);
        }
        let x = Tensor::with_dtype(data, &bundle.config.patch_shape(chunk.len()), bundle.dtype())?;
        values.extend(no_grad(|| f(&x))?);
    }
    let mut out = reassemble(&layout, &values)?;
    out.spacing = volume.spacing;
    Ok(out)
}

fn split_samples(t: &Tensor, n: usize) -> Vec<Vec<f64>> {
    let per = t.numel() / n;
    t.data().chunks(per).map(<[f64]>::to_vec).collect()
}

/// Foreground probability volume and thresholded mask for a scan of
/// `domain`, predicted patchwise through that domain's content encoder.
pub fn segment_volume(bundle: &ModelBundle, domain: Domain, volume: &Volume) -> Result<(Volume, Mask)> {
    let prob = patchwise(bundle, volume, &|x| {
        let n = x.shape()[0];
        let p = bundle.segment(&bundle.encode_content(domain, x)?)?.softmax_channels()?;
        let fg = p.narrow(1, 1, 1)?;
        Ok(split_samples(&fg, n))
    })?;
    let labels = prob.voxels.iter().map(|&p| (p > 0.5) as u8).collect();
    let mask = Mask::new(prob.dims, labels)?;
    Ok((prob, mask))
}

/// Content-only image of a scan: each patch is encoded with the domain's
/// content encoder and decoded with the zero style vector.
pub fn export_content(bundle: &ModelBundle, domain: Domain, volume: &Volume) -> Result<Volume> {
    patchwise(bundle, volume, &|x| {
        let n = x.shape()[0];
        let img = bundle.content_only_image(&bundle.encode_content(domain, x)?)?;
        Ok(split_samples(&img, n))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaseScore {
    pub dice: f64,
    pub jaccard: f64,
}

/// Segments a labeled scan and scores the prediction.
pub fn evaluate_case(bundle: &ModelBundle, domain: Domain, volume: &Volume, truth: &Mask) -> Result<CaseScore> {
    if truth.dims != volume.dims {
        return Err(Error::invalid(format!(
            "mask dims {:?} differ from volume dims {:?}",
            truth.dims, volume.dims
        )));
    }
    let (_, pred) = segment_volume(bundle, domain, volume)?;
    Ok(CaseScore {
        dice: dice_metric(&pred.labels, &truth.labels)?,
        jaccard: jaccard_metric(&pred.labels, &truth.labels)?,
    })
}

/// Mean absolute difference between the X-encoder codes of the first scan
/// and the Y-encoder codes of the second, over non-overlapping covering
/// patches, averaged across pairs.
pub fn content_code_distance(bundle: &ModelBundle, pairs: &[(Volume, Volume)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("content_code_distance needs at least one pair"));
    }
    let patch = bundle.config.patch;
    let mut total = 0.0;
    for (vx, vy) in pairs {
        if vx.dims != vy.dims {
            return Err(Error::invalid(format!("pair dims differ: {:?} vs {:?}", vx.dims, vy.dims)));
        }
        let layout = PatchLayout::covering(vx.dims, patch, patch)?;
        let (nx, ny) = (vx.normalized(), vy.normalized());
        let stack = |v: &Volume| -> Result<Tensor> {
            let mut data = Vec::new();
            for &o in &layout.origins {
                data.extend(crop_patch(v, None, o, patch).volume.voxels);
            }
            Ok(Tensor::with_dtype(
                data,
                &bundle.config.patch_shape(layout.origins.len()),
                bundle.dtype(),
            )?)
        };
        let (tx, ty) = (stack(&nx)?, stack(&ny)?);
        let d = no_grad(|| -> Result<f64> {
            let cx = bundle.encode_content(Domain::X, &tx)?;
            let cy = bundle.encode_content(Domain::Y, &ty)?;
            Ok(cx.l1_distance(&cy)?.item()?)
        })?;
        total += d;
    }
    Ok(total / pairs.len() as f64)
}
