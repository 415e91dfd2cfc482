use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    aggregate, baseline_average, baseline_full_mapping, baseline_variant_weight, init_params, materialize,
    renormalize_variant, AttentionAggregator, AttentionParams, LiveMap, MappingMatrix, MappingSidecar, Provenance,
};
use crate::autodiff::{write_atomic, Bindings, ParamRole, ParamStore, Tape, Tensor, Var};
use crate::conv::{glorot, spiral_length, spiral_sequences, ChebLayer, SpiralLayer, SpiralTable};
use crate::decimation::MeshHierarchy;
use crate::error::{dim_err, Error, Result};
use crate::mesh::{build_adjacency, normalized_laplacian};
use crate::scalar::Real;
use crate::sparse::SparseMatrix;

use super::config::{AggregationKind, ConvKind, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
enum ConvLayer {
    Cheb(ChebLayer),
    Spiral(SpiralLayer),
}

impl ConvLayer {
    fn num_params(&self) -> usize {
        match self {
            Self::Cheb(l) => l.num_params(),
            Self::Spiral(l) => l.num_params(),
        }
    }
}

#[derive(Clone, Debug)]
struct Conv {
    layer: ConvLayer,
    level: usize,
    weight: String,
    bias: Option<String>,
}

#[derive(Clone, Debug)]
enum Mapper<T> {
    Fixed {
        matrix: Arc<SparseMatrix<T>>,
        provenance: Provenance,
    },
    Full {
        name: String,
    },
    Variant {
        pattern: Arc<SparseMatrix<T>>,
        name: String,
    },
    Attention {
        agg: AttentionAggregator<T>,
        prefix: String,
    },
}

/// Which side of the network a mapping belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Encoder, level `l + 1 → l`.
    Down,
    /// Decoder, level `l → l + 1`.
    Up,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Down => "down",
            Self::Up => "up",
        }
    }
}

/// Current value of one mapping matrix with its metadata.
#[derive(Clone, Debug)]
pub struct MappingRecord<T> {
    pub direction: Direction,
    pub level: usize,
    pub mapping: MappingMatrix<T>,
    pub sidecar: MappingSidecar,
    /// Attention head before fusion, when the mapping has one.
    pub head: Option<SparseMatrix<T>>,
    pub k: Option<usize>,
}

/// Parameters and mapping matrices recorded on one tape; reused by every
/// sample evaluated on that tape.
pub struct Bound<T> {
    bindings: Bindings,
    down: Vec<LiveMap<T>>,
    up: Vec<LiveMap<T>>,
    /// Attention rows whose masked score sum was not positive.
    pub degenerate_rows: usize,
}

impl<T> Bound<T> {
    pub fn bindings(&self) -> &Bindings {
        &self.bindings
    }
}

/// Mesh autoencoder: conv/down stages, a latent bottleneck, and mirrored up/conv stages.
#[derive(Clone, Debug)]
pub struct Autoencoder<T> {
    config: ModelConfig,
    hierarchy: Arc<MeshHierarchy<T>>,
    laplacians: Vec<Arc<SparseMatrix<T>>>,
    spirals: Vec<SpiralTable>,
    encoder: Vec<Conv>,
    decoder: Vec<Conv>,
    down: Vec<Mapper<T>>,
    up: Vec<Mapper<T>>,
    params: ParamStore<T>,
}

fn check_params_shape<T: Real>(params: &ParamStore<T>, name: &str, shape: &[usize]) -> Result<()> {
    match params.get(name) {
        Some(t) if t.shape() == shape => Ok(()),
        Some(t) => Err(Error::Contract(format!("parameter {name} has shape {:?}, expected {shape:?}", t.shape()))),
        None => Err(Error::Contract(format!("missing parameter {name}"))),
    }
}

impl<T: Real> Autoencoder<T> {
    pub fn build(config: ModelConfig, hierarchy: Arc<MeshHierarchy<T>>) -> Result<Self> {
        config.validate()?;
        let depth = config.depth();
        if hierarchy.depth() != depth {
            return Err(Error::Config(format!(
                "configuration has {depth} levels but the hierarchy has {}",
                hierarchy.depth()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();

        let (mut laplacians, mut spirals) = (Vec::new(), Vec::new());
        for mesh in hierarchy.levels() {
            match config.conv_kind {
                ConvKind::Spectral => laplacians.push(Arc::new(normalized_laplacian(&build_adjacency(mesh)))),
                ConvKind::Spiral => spirals.push(spiral_sequences(mesh, spiral_length(mesh)?)?),
            }
        }
        let make_conv = |level: usize, d_in: usize, d_out: usize, bias: bool, name: &str| -> Conv {
            let layer = match config.conv_kind {
                ConvKind::Spectral => ConvLayer::Cheb(ChebLayer::new(config.cheb_order, d_in, d_out, bias)),
                ConvKind::Spiral => ConvLayer::Spiral(SpiralLayer::new(spirals[level].length(), d_in, d_out, bias)),
            };
            Conv {
                layer,
                level,
                weight: format!("{name}.weight"),
                bias: bias.then(|| format!("{name}.bias")),
            }
        };
        let insert_conv = |conv: &Conv, params: &mut ParamStore<T>, rng: &mut ChaCha8Rng| -> Result<()> {
            let w = match conv.layer {
                ConvLayer::Cheb(l) => l.init_weight(rng),
                ConvLayer::Spiral(l) => l.init_weight(rng),
            };
            let d_out = w.cols();
            params.insert(conv.weight.clone(), w, ParamRole::Model)?;
            if let Some(b) = &conv.bias {
                params.insert(b.clone(), Tensor::zeros(&[1, d_out]), ParamRole::Model)?;
            }
            Ok(())
        };

        let enc_w = &config.encoder_widths;
        let dec_w = &config.decoder_widths;
        let n0 = hierarchy.level(0).num_vertices();

        let mut encoder = Vec::with_capacity(depth);
        let mut down: Vec<Option<Mapper<T>>> = vec![None; depth];
        for i in 0..depth {
            let level = depth - i;
            let conv = make_conv(level, enc_w[i], enc_w[i + 1], true, &format!("enc.conv{i}"));
            insert_conv(&conv, &mut params, &mut rng)?;
            encoder.push(conv);
            let l = level - 1;
            down[l] = Some(make_mapper(
                &config,
                config.encoder_aggregation,
                hierarchy.down(l),
                hierarchy.level(l + 1).positions(),
                hierarchy.level(l).positions(),
                config.k_down,
                config.masking_down,
                format!("enc.down{l}"),
                &mut params,
                &mut rng,
            )?);
        }
        let enc_fc_in = n0 * enc_w[depth];
        params.insert("enc.fc.weight", glorot(enc_fc_in, config.latent_dim, &mut rng), ParamRole::Model)?;
        params.insert("enc.fc.bias", Tensor::zeros(&[1, config.latent_dim]), ParamRole::Model)?;
        let dec_fc_out = n0 * dec_w[0];
        params.insert("dec.fc.weight", glorot(config.latent_dim, dec_fc_out, &mut rng), ParamRole::Model)?;
        params.insert("dec.fc.bias", Tensor::zeros(&[1, dec_fc_out]), ParamRole::Model)?;

        let mut decoder = Vec::with_capacity(depth + 1);
        let mut up = Vec::with_capacity(depth);
        for l in 0..depth {
            up.push(make_mapper(
                &config,
                config.decoder_aggregation,
                hierarchy.up(l),
                hierarchy.level(l).positions(),
                hierarchy.level(l + 1).positions(),
                config.k_up,
                config.masking_up,
                format!("dec.up{l}"),
                &mut params,
                &mut rng,
            )?);
            let conv = make_conv(l + 1, dec_w[l], dec_w[l + 1], true, &format!("dec.conv{l}"));
            insert_conv(&conv, &mut params, &mut rng)?;
            decoder.push(conv);
        }
        let out = make_conv(depth, dec_w[depth], dec_w[depth + 1], false, "dec.out");
        insert_conv(&out, &mut params, &mut rng)?;
        decoder.push(out);

        Ok(Self {
            config,
            hierarchy,
            laplacians,
            spirals,
            encoder,
            decoder,
            down: down.into_iter().map(|m| m.expect("every level has a down mapping")).collect(),
            up,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn hierarchy(&self) -> &Arc<MeshHierarchy<T>> {
        &self.hierarchy
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_vertices(&self) -> usize {
        self.hierarchy.finest().num_vertices()
    }

    /// Total stored scalars; `inference_only` leaves out keys, queries and fusion weights.
    pub fn count_parameters(&self, inference_only: bool) -> usize {
        self.params.count(inference_only.then_some(ParamRole::Model))
    }

    /// Per-layer counts from the layer shapes alone, without looking at stored arrays.
    pub fn layer_parameter_counts(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = self
            .encoder
            .iter()
            .chain(&self.decoder)
            .map(|c| (c.weight.trim_end_matches(".weight").to_string(), c.layer.num_params()))
            .collect();
        let n0 = self.hierarchy.level(0).num_vertices();
        let depth = self.config.depth();
        let nz = self.config.latent_dim;
        out.push(("enc.fc".into(), n0 * self.config.encoder_widths[depth] * nz + nz));
        out.push(("dec.fc".into(), nz * n0 * self.config.decoder_widths[0] + n0 * self.config.decoder_widths[0]));
        out
    }

    /// Records every parameter on `tape` and evaluates each mapping matrix once.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<Bound<T>> {
        let bindings = self.params.bind(tape);
        self.bind_with(tape, bindings)
    }

    /// Like [`bind`](Self::bind), over variables the caller already recorded.
    pub fn bind_with(&self, tape: &mut Tape<T>, bindings: Bindings) -> Result<Bound<T>> {
        let mut degenerate_rows = 0;
        let mut live = |m: &Mapper<T>, tape: &mut Tape<T>| -> Result<LiveMap<T>> {
            Ok(match m {
                Mapper::Fixed { matrix, .. } => LiveMap::Fixed(Arc::clone(matrix)),
                Mapper::Full { name } => LiveMap::Dense(bindings.var(name)),
                Mapper::Variant { pattern, name } => LiveMap::Values {
                    pattern: Arc::clone(pattern),
                    values: bindings.var(name),
                },
                Mapper::Attention { agg, prefix } => {
                    let (map, deg) = agg.live(
                        tape,
                        bindings.var(&format!("{prefix}.keys")),
                        bindings.var(&format!("{prefix}.queries")),
                        bindings.try_var(&format!("{prefix}.w_a")),
                    )?;
                    degenerate_rows += deg;
                    map
                }
            })
        };
        let down = self.down.iter().map(|m| live(m, tape)).collect::<Result<Vec<_>>>()?;
        let up = self.up.iter().map(|m| live(m, tape)).collect::<Result<Vec<_>>>()?;
        Ok(Bound {
            bindings,
            down,
            up,
            degenerate_rows,
        })
    }

    fn conv(&self, tape: &mut Tape<T>, bound: &Bound<T>, conv: &Conv, x: Var) -> Result<Var> {
        let w = bound.bindings.var(&conv.weight);
        let b = conv.bias.as_ref().map(|n| bound.bindings.var(n));
        match conv.layer {
            ConvLayer::Cheb(l) => l.forward(tape, x, &self.laplacians[conv.level], w, b),
            ConvLayer::Spiral(l) => l.forward(tape, x, &self.spirals[conv.level], w, b),
        }
    }

    /// `n_L × 3` features to a `1 × n_z` latent code.
    pub fn encode_on(&self, tape: &mut Tape<T>, bound: &Bound<T>, x: Var) -> Result<Var> {
        let n = self.num_vertices();
        if tape.value(x).shape() != [n, 3] {
            return dim_err("encode", format!("input {:?}, expected [{n}, 3]", tape.value(x).shape()));
        }
        let depth = self.config.depth();
        let mut h = x;
        for (i, conv) in self.encoder.iter().enumerate() {
            h = self.conv(tape, bound, conv, h)?;
            h = tape.relu(h);
            h = aggregate(tape, &bound.down[depth - 1 - i], h)?;
        }
        let flat = tape.value(h).len();
        h = tape.reshape(h, &[1, flat])?;
        h = tape.matmul(h, bound.bindings.var("enc.fc.weight"))?;
        tape.add_bias(h, bound.bindings.var("enc.fc.bias"))
    }

    /// `1 × n_z` latent code to `n_L × 3` features.
    pub fn decode_on(&self, tape: &mut Tape<T>, bound: &Bound<T>, z: Var) -> Result<Var> {
        if tape.value(z).shape() != [1, self.config.latent_dim] {
            return dim_err("decode", format!("latent {:?}, expected [1, {}]", tape.value(z).shape(), self.config.latent_dim));
        }
        let mut h = tape.matmul(z, bound.bindings.var("dec.fc.weight"))?;
        h = tape.add_bias(h, bound.bindings.var("dec.fc.bias"))?;
        h = tape.reshape(h, &[self.hierarchy.level(0).num_vertices(), self.config.decoder_widths[0]])?;
        let depth = self.config.depth();
        for (l, conv) in self.decoder.iter().enumerate() {
            if l < depth {
                h = aggregate(tape, &bound.up[l], h)?;
                h = self.conv(tape, bound, conv, h)?;
                h = tape.relu(h);
            } else {
                h = self.conv(tape, bound, conv, h)?;
            }
        }
        Ok(h)
    }

    /// Mean L1 reconstruction loss over a batch of `n_L × 3` inputs.
    pub fn batch_loss(&self, tape: &mut Tape<T>, bound: &Bound<T>, inputs: &[Tensor<T>]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let mut total: Option<Var> = None;
        for x in inputs {
            let xv = tape.constant(x.clone());
            let z = self.encode_on(tape, bound, xv)?;
            let y = self.decode_on(tape, bound, z)?;
            let l = tape.l1_loss(y, xv)?;
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        let inv = T::one() / T::from_usize(inputs.len()).unwrap();
        Ok(tape.scale(total.unwrap(), inv))
    }

    /// Latent code of one input.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let xv = tape.constant(x.clone());
        let z = self.encode_on(&mut tape, &bound, xv)?;
        Ok(tape.value(z).data().to_vec())
    }

    pub fn decode(&self, z: &[T]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let zv = tape.constant(Tensor::matrix(1, z.len(), z.to_vec())?);
        let y = self.decode_on(&mut tape, &bound, zv)?;
        Ok(tape.value(y).clone())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_batch(std::slice::from_ref(x))?.remove(0))
    }

    /// Reconstructions of several inputs sharing one evaluation of the mappings.
    pub fn forward_batch(&self, inputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let mut out = Vec::with_capacity(inputs.len());
        for x in inputs {
            let xv = tape.constant(x.clone());
            let z = self.encode_on(&mut tape, &bound, xv)?;
            let y = self.decode_on(&mut tape, &bound, z)?;
            out.push(tape.value(y).clone());
        }
        Ok(out)
    }

    /// Restores constraints after an optimizer step (variant rows back to stochastic).
    pub fn post_step(&mut self) {
        for m in self.down.iter().chain(&self.up) {
            if let Mapper::Variant { pattern, name } = m {
                if let Some(v) = self.params.get_mut(name) {
                    renormalize_variant(pattern, v);
                }
            }
        }
    }

    fn attention_params(&self, prefix: &str) -> Result<AttentionParams<T>> {
        let get = |n: &str| {
            self.params
                .get(&format!("{prefix}.{n}"))
                .cloned()
                .ok_or_else(|| Error::Contract(format!("missing parameter {prefix}.{n}")))
        };
        Ok(AttentionParams {
            keys: get("keys")?,
            queries: get("queries")?,
            w_a: match self.params.get(&format!("{prefix}.w_a")) {
                Some(t) => t.item(),
                None => T::zero(),
            },
        })
    }

    /// Smallest top-`k` score gap over every live attention mapping.
    pub fn topk_margin(&self) -> Result<f64> {
        let mut margin = f64::INFINITY;
        for m in self.down.iter().chain(&self.up) {
            if let Mapper::Attention { agg, prefix } = m {
                margin = margin.min(agg.topk_margin(&self.attention_params(prefix)?)?);
            }
        }
        Ok(margin)
    }

    /// Whether any attention module is still live.
    pub fn has_attention(&self) -> bool {
        self.down.iter().chain(&self.up).any(|m| matches!(m, Mapper::Attention { .. }))
    }

    /// Freezes every attention mapping into a constant matrix and drops keys,
    /// queries and fusion weights.
    pub fn export(&mut self) -> Result<()> {
        let mut frozen = Vec::new();
        for (dir, maps) in [(Direction::Down, &self.down), (Direction::Up, &self.up)] {
            for (l, m) in maps.iter().enumerate() {
                if let Mapper::Attention { agg, prefix } = m {
                    let fixed = agg.export_fixed(&self.attention_params(prefix)?)?;
                    frozen.push((dir, l, fixed.matrix));
                }
            }
        }
        for (dir, l, matrix) in frozen {
            let slot = match dir {
                Direction::Down => &mut self.down[l],
                Direction::Up => &mut self.up[l],
            };
            *slot = Mapper::Fixed {
                matrix: Arc::new(matrix),
                provenance: Provenance::Exported,
            };
        }
        self.params.remove_role(ParamRole::Attention);
        Ok(())
    }

    /// Current value of every mapping matrix, encoder first.
    pub fn mapping_matrices(&self) -> Result<Vec<MappingRecord<T>>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let mut out = Vec::new();
        for (dir, maps, lives) in [
            (Direction::Down, &self.down, &bound.down),
            (Direction::Up, &self.up, &bound.up),
        ] {
            for (l, (m, live)) in maps.iter().zip(lives).enumerate() {
                let matrix = materialize(&tape, live)?;
                let (provenance, head, k, c, w_a) = match m {
                    Mapper::Fixed { provenance, .. } => (*provenance, None, None, None, None),
                    Mapper::Full { .. } => (Provenance::Full, None, None, None, None),
                    Mapper::Variant { .. } => (Provenance::Variant, None, None, None, None),
                    Mapper::Attention { agg, prefix } => {
                        let p = self.attention_params(prefix)?;
                        let prov = if agg.fusion() { Provenance::Fused } else { Provenance::Attention };
                        let w = agg.fusion().then(|| p.w_a.to_f64_lossy());
                        let k = agg.masking().then_some(agg.k());
                        (prov, Some(agg.head(&p)?), k, Some(agg.c()), w)
                    }
                };
                out.push(MappingRecord {
                    direction: dir,
                    level: l,
                    sidecar: MappingSidecar {
                        provenance,
                        level: l,
                        direction: dir.as_str().into(),
                        rows: matrix.rows(),
                        cols: matrix.cols(),
                        k,
                        c,
                        w_a,
                    },
                    mapping: MappingMatrix::new(matrix, provenance),
                    head,
                    k,
                });
            }
        }
        Ok(out)
    }

    /// Writes `model.json`, the hierarchy, the parameters and any exported mappings.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let exported = |maps: &[Mapper<T>]| {
            maps.iter()
                .map(|m| matches!(m, Mapper::Fixed { provenance: Provenance::Exported, .. }))
                .collect()
        };
        let manifest = ModelManifest {
            format: MODEL_FORMAT.into(),
            config: self.config.clone(),
            exported_down: exported(&self.down),
            exported_up: exported(&self.up),
        };
        self.hierarchy.export(&dir.join("hierarchy"))?;
        self.params.save(dir)?;
        for (dir_kind, maps) in [(Direction::Down, &self.down), (Direction::Up, &self.up)] {
            for (l, m) in maps.iter().enumerate() {
                if let Mapper::Fixed {
                    matrix,
                    provenance: Provenance::Exported,
                } = m
                {
                    let side = MappingSidecar {
                        provenance: Provenance::Exported,
                        level: l,
                        direction: dir_kind.as_str().into(),
                        rows: matrix.rows(),
                        cols: matrix.cols(),
                        k: None,
                        c: None,
                        w_a: None,
                    };
                    MappingMatrix::new((**matrix).clone(), Provenance::Exported).write(
                        &dir.join("maps"),
                        &format!("{}_{l}", dir_kind.as_str()),
                        &side,
                    )?;
                }
            }
        }
        write_atomic(&dir.join("model.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: ModelManifest = serde_json::from_slice(&fs::read(dir.join("model.json"))?)?;
        if manifest.format != MODEL_FORMAT {
            return Err(Error::UnsupportedFormat(format!("model format {}", manifest.format)));
        }
        let hierarchy = Arc::new(MeshHierarchy::import(&dir.join("hierarchy"))?);
        let mut model = Self::build(manifest.config, hierarchy)?;
        let depth = model.config.depth();
        if manifest.exported_down.len() != depth || manifest.exported_up.len() != depth {
            return Err(Error::Contract("model manifest does not match the hierarchy depth".into()));
        }
        for (dir_kind, flags) in [(Direction::Down, &manifest.exported_down), (Direction::Up, &manifest.exported_up)] {
            for (l, &flag) in flags.iter().enumerate() {
                if flag {
                    let (m, _) = MappingMatrix::read(&dir.join("maps"), &format!("{}_{l}", dir_kind.as_str()))?;
                    let slot = match dir_kind {
                        Direction::Down => &mut model.down[l],
                        Direction::Up => &mut model.up[l],
                    };
                    *slot = Mapper::Fixed {
                        matrix: Arc::new(m.matrix),
                        provenance: Provenance::Exported,
                    };
                }
            }
        }
        let loaded = ParamStore::load(dir)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .params
            .entries()
            .iter()
            .filter(|e| e.role == ParamRole::Model || model.needs_param(&e.name))
            .map(|e| (e.name.clone(), e.value.shape().to_vec()))
            .collect();
        for (name, shape) in &expected {
            check_params_shape(&loaded, name, shape)?;
        }
        if loaded.len() != expected.len() {
            return Err(Error::Contract("checkpoint holds parameters the model does not use".into()));
        }
        model.params = loaded;
        Ok(model)
    }

    fn needs_param(&self, name: &str) -> bool {
        self.down.iter().chain(&self.up).any(|m| match m {
            Mapper::Attention { prefix, .. } => name.starts_with(&format!("{prefix}.")),
            _ => false,
        })
    }
}

const MODEL_FORMAT: &str = "meshattn-model-v1";

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    format: String,
    config: ModelConfig,
    exported_down: Vec<bool>,
    exported_up: Vec<bool>,
}

#[allow(clippy::too_many_arguments)]
fn make_mapper<T: Real>(
    config: &ModelConfig,
    kind: AggregationKind,
    mp: &SparseMatrix<T>,
    prev_positions: &[[T; 3]],
    next_positions: &[[T; 3]],
    k: usize,
    masking: bool,
    prefix: String,
    params: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
) -> Result<Mapper<T>> {
    Ok(match kind {
        AggregationKind::Qem => Mapper::Fixed {
            matrix: Arc::new(mp.clone()),
            provenance: Provenance::Qem,
        },
        AggregationKind::Average => Mapper::Fixed {
            matrix: Arc::new(baseline_average(mp)),
            provenance: Provenance::Average,
        },
        AggregationKind::Full => {
            let name = format!("{prefix}.full");
            params.insert(name.clone(), baseline_full_mapping(mp.rows(), mp.cols(), rng.gen()), ParamRole::Model)?;
            Mapper::Full { name }
        }
        AggregationKind::Variant => {
            let (pattern, values) = baseline_variant_weight(mp);
            let name = format!("{prefix}.values");
            params.insert(name.clone(), values, ParamRole::Model)?;
            Mapper::Variant { pattern, name }
        }
        AggregationKind::Attention => {
            let agg = AttentionAggregator::new(Arc::new(mp.clone()), config.c, k, masking, config.fusion)?;
            let p = init_params(prev_positions, next_positions, config.c, config.init_scheme, config.w_a_init, rng.gen())?;
            params.insert(format!("{prefix}.keys"), p.keys, ParamRole::Attention)?;
            params.insert(format!("{prefix}.queries"), p.queries, ParamRole::Attention)?;
            if config.fusion {
                let name = format!("{prefix}.w_a");
                params.insert(name.clone(), Tensor::scalar(p.w_a), ParamRole::Attention)?;
                params.set_trainable(&name, config.train_w_a)?;
            }
            Mapper::Attention { agg, prefix }
        }
    })
}
