//! Parameter storage, layer building blocks, and spectral normalization.

use std::cell::RefCell;
use std::collections::HashMap;

use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conv::{conv2d, ConvSpec};
use crate::tape::{div, matmul, reshape, Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// State carried across steps but not optimized (e.g. power-iteration
    /// vectors). Saved in checkpoints.
    Buffer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

/// Owns every parameter and optimizer moment of one network.
#[derive(Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, kind: ParamKind, value: Tensor) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let shape = value.shape().to_vec();
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            kind,
            value,
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        });
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(value.shape(), self.entries[id.0].value.shape());
        self.entries[id.0].value = value;
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    /// Total number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Load values (and moments) from another store's entries, matched by
    /// name. Errors on any missing name or shape mismatch.
    pub fn load_from(&mut self, src: &[ParamEntry]) -> Result<(), String> {
        let mut seen = vec![false; self.entries.len()];
        for s in src {
            let Some(&idx) = self.by_name.get(&s.name) else {
                return Err(format!("unexpected parameter {}", s.name));
            };
            let dst = &mut self.entries[idx];
            if dst.value.shape() != s.value.shape() {
                return Err(format!(
                    "shape mismatch for {}: {:?} vs {:?}",
                    s.name,
                    dst.value.shape(),
                    s.value.shape()
                ));
            }
            dst.value = s.value.clone();
            dst.m = s.m.clone();
            dst.v = s.v.clone();
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(format!("missing parameter {}", self.entries[missing].name));
        }
        Ok(())
    }

    /// Order-insensitive fingerprint of parameter values, for
    /// frozen-weights assertions.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint_filtered(|_| true)
    }

    /// Fingerprint of trainable values only (power-iteration buffers may
    /// advance without any optimizer update).
    pub fn fingerprint_trainable(&self) -> u64 {
        self.fingerprint_filtered(|e| e.kind == ParamKind::Trainable)
    }

    fn fingerprint_filtered(&self, keep: impl Fn(&ParamEntry) -> bool) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for e in self.entries.iter().filter(|e| keep(e)) {
            for &x in e.value.data() {
                for b in x.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// Binds a [`ParamStore`] to a [`Tape`] for one forward/backward pass.
pub struct Session<'a> {
    pub tape: &'a Tape,
    store: &'a ParamStore,
    vars: RefCell<Vec<Option<Var>>>,
    /// Training mode: parameters become differentiable leaves and
    /// power-iteration buffers advance.
    pub train: bool,
    pending: RefCell<Vec<(ParamId, Tensor)>>,
}

impl<'a> Session<'a> {
    pub fn new(tape: &'a Tape, store: &'a ParamStore, train: bool) -> Self {
        Self {
            tape,
            store,
            vars: RefCell::new(vec![None; store.len()]),
            train,
            pending: RefCell::new(Vec::new()),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Tape variable for a parameter, inserted lazily once per session.
    pub fn param(&self, id: ParamId) -> Var {
        let mut vars = self.vars.borrow_mut();
        if let Some(v) = vars[id.0] {
            return v;
        }
        let entry = self.store.entry(id);
        let var = if self.train && entry.kind == ParamKind::Trainable {
            self.tape.leaf(entry.value.clone())
        } else {
            self.tape.constant(entry.value.clone())
        };
        vars[id.0] = Some(var);
        var
    }

    fn queue_buffer_write(&self, id: ParamId, value: Tensor) {
        self.pending.borrow_mut().push((id, value));
    }

    /// Queued buffer updates (power-iteration vectors); apply them to the
    /// store with [`apply_buffer_writes`] once the session is done.
    pub fn take_buffer_writes(&self) -> Vec<(ParamId, Tensor)> {
        self.pending.borrow_mut().drain(..).collect()
    }

    /// Gradients for every trainable parameter touched by this session,
    /// in parameter-store order. Untouched or gradient-free parameters
    /// yield zero tensors.
    pub fn collect_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        let vars = self.vars.borrow();
        let mut out = Vec::new();
        for (idx, entry) in self.store.entries.iter().enumerate() {
            if entry.kind != ParamKind::Trainable {
                continue;
            }
            let g = vars[idx]
                .and_then(|v| grads.get(v).cloned())
                .unwrap_or_else(|| Tensor::zeros(entry.value.shape()));
            out.push((ParamId(idx), g));
        }
        out
    }
}

/// Write queued buffer updates back into the store.
pub fn apply_buffer_writes(store: &mut ParamStore, writes: Vec<(ParamId, Tensor)>) {
    for (id, value) in writes {
        store.set_value(id, value);
    }
}

fn normal_vec(n: usize, std: f64, rng: &mut ChaCha12Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| x / norm).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: ConvSpec,
    sn: Option<(ParamId, ParamId)>,
    shape: [usize; 4],
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        ksize: usize,
        stride: usize,
        pad: usize,
        spectral_norm: bool,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        Self::with_gain(
            store, name, cin, cout, ksize, stride, pad, spectral_norm, 1.0, rng,
        )
    }

    /// `gain` scales the He-normal init; small gains make near-zero heads.
    #[allow(clippy::too_many_arguments)]
    pub fn with_gain(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        ksize: usize,
        stride: usize,
        pad: usize,
        spectral_norm: bool,
        gain: f64,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let fan_in = cin * ksize * ksize;
        let std = gain * (2.0 / fan_in as f64).sqrt();
        let w = Tensor::from_vec(
            &[cout, cin, ksize, ksize],
            normal_vec(cout * cin * ksize * ksize, std, rng),
        );
        let wid = store.add(&format!("{name}.w"), ParamKind::Trainable, w);
        let bid = store.add(
            &format!("{name}.b"),
            ParamKind::Trainable,
            Tensor::zeros(&[cout]),
        );
        let sn = spectral_norm.then(|| {
            let u = Tensor::from_vec(&[1, cout], normalized(&normal_vec(cout, 1.0, rng)));
            let r = cin * ksize * ksize;
            let v = Tensor::from_vec(&[r, 1], normalized(&normal_vec(r, 1.0, rng)));
            (
                store.add(&format!("{name}.sn_u"), ParamKind::Buffer, u),
                store.add(&format!("{name}.sn_v"), ParamKind::Buffer, v),
            )
        });
        Self {
            w: wid,
            b: bid,
            spec: ConvSpec { stride, pad },
            sn,
            shape: [cout, cin, ksize, ksize],
        }
    }

    /// Effective (possibly normalized) weight as a graph variable.
    pub fn weight_var(&self, s: &Session) -> Var {
        let w_var = s.param(self.w);
        let Some((uid, vid)) = self.sn else {
            return w_var;
        };
        let [cout, cin, kh, kw] = self.shape;
        let r = cin * kh * kw;
        let store = s.store();
        let w_val = store.value(self.w);
        let (u, v) = power_iteration(
            w_val.data(),
            cout,
            r,
            store.value(uid).data(),
            s.train,
        );
        if s.train {
            s.queue_buffer_write(uid, Tensor::from_vec(&[1, cout], u.clone()));
            s.queue_buffer_write(vid, Tensor::from_vec(&[r, 1], v.clone()));
        }
        let u_c = s.tape.constant(Tensor::from_vec(&[1, cout], u));
        let v_c = s.tape.constant(Tensor::from_vec(&[r, 1], v));
        let w_mat = reshape(s.tape, w_var, &[cout, r]);
        let sigma = matmul(s.tape, matmul(s.tape, u_c, w_mat), v_c); // (1,1)
        let w_bar = div(s.tape, w_mat, sigma);
        reshape(s.tape, w_bar, &[cout, cin, kh, kw])
    }

    pub fn forward(&self, s: &Session, x: Var) -> Var {
        let w = self.weight_var(s);
        let b = s.param(self.b);
        conv2d(s.tape, x, w, b, self.spec)
    }
}

/// One power-iteration refresh of (u, v) for W (o x r).
/// In eval mode the stored u is kept and only v is recomputed from it,
/// so sigma is a pure function of the stored state.
fn power_iteration(w: &[f64], o: usize, r: usize, u0: &[f64], advance: bool) -> (Vec<f64>, Vec<f64>) {
    let mut u = u0.to_vec();
    // v = normalize(W^T u)
    let mut v = vec![0.0f64; r];
    for i in 0..o {
        let ui = u[i];
        if ui != 0.0 {
            let row = &w[i * r..(i + 1) * r];
            for (vj, &wij) in v.iter_mut().zip(row.iter()) {
                *vj += wij * ui;
            }
        }
    }
    v = normalized(&v);
    if advance {
        // u = normalize(W v)
        let mut nu = vec![0.0f64; o];
        for i in 0..o {
            let row = &w[i * r..(i + 1) * r];
            nu[i] = row.iter().zip(v.iter()).map(|(&a, &b)| a * b).sum();
        }
        u = normalized(&nu);
        // refresh v against the new u for a consistent pair
        let mut nv = vec![0.0f64; r];
        for i in 0..o {
            let ui = u[i];
            let row = &w[i * r..(i + 1) * r];
            for (vj, &wij) in nv.iter_mut().zip(row.iter()) {
                *vj += wij * ui;
            }
        }
        v = normalized(&nv);
    }
    (u, v)
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    sn: Option<(ParamId, ParamId)>,
    shape: [usize; 2],
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        spectral_norm: bool,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        Self::with_gain(store, name, cin, cout, spectral_norm, 1.0, rng)
    }

    pub fn with_gain(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        spectral_norm: bool,
        gain: f64,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let std = gain * (1.0 / cin as f64).sqrt();
        let w = Tensor::from_vec(&[cout, cin], normal_vec(cout * cin, std, rng));
        let wid = store.add(&format!("{name}.w"), ParamKind::Trainable, w);
        let bid = store.add(
            &format!("{name}.b"),
            ParamKind::Trainable,
            Tensor::zeros(&[cout]),
        );
        let sn = spectral_norm.then(|| {
            let u = Tensor::from_vec(&[1, cout], normalized(&normal_vec(cout, 1.0, rng)));
            let v = Tensor::from_vec(&[cin, 1], normalized(&normal_vec(cin, 1.0, rng)));
            (
                store.add(&format!("{name}.sn_u"), ParamKind::Buffer, u),
                store.add(&format!("{name}.sn_v"), ParamKind::Buffer, v),
            )
        });
        Self {
            w: wid,
            b: bid,
            sn,
            shape: [cout, cin],
        }
    }

    /// x (n, cin) -> (n, cout)
    pub fn forward(&self, s: &Session, x: Var) -> Var {
        let [cout, cin] = self.shape;
        let mut w_var = s.param(self.w);
        if let Some((uid, vid)) = self.sn {
            let store = s.store();
            let (u, v) = power_iteration(
                store.value(self.w).data(),
                cout,
                cin,
                store.value(uid).data(),
                s.train,
            );
            if s.train {
                s.queue_buffer_write(uid, Tensor::from_vec(&[1, cout], u.clone()));
                s.queue_buffer_write(vid, Tensor::from_vec(&[cin, 1], v.clone()));
            }
            let u_c = s.tape.constant(Tensor::from_vec(&[1, cout], u));
            let v_c = s.tape.constant(Tensor::from_vec(&[cin, 1], v));
            let sigma = matmul(s.tape, matmul(s.tape, u_c, w_var), v_c);
            w_var = div(s.tape, w_var, sigma);
        }
        let wt = crate::tape::transpose2(s.tape, w_var);
        let y = matmul(s.tape, x, wt);
        let b = s.param(self.b);
        crate::tape::add(s.tape, y, b)
    }
}

/// Largest singular value by long power iteration; test oracle for
/// spectral normalization.
pub fn spectral_radius(w: &[f64], o: usize, r: usize, iters: usize) -> f64 {
    let mut u: Vec<f64> = (0..o).map(|i| ((i * 37 + 11) % 97) as f64 / 97.0 + 0.1).collect();
    u = normalized(&u);
    let mut v = vec![0.0f64; r];
    for _ in 0..iters {
        for x in v.iter_mut() {
            *x = 0.0;
        }
        for i in 0..o {
            let ui = u[i];
            for (vj, &wij) in v.iter_mut().zip(w[i * r..(i + 1) * r].iter()) {
                *vj += wij * ui;
            }
        }
        v = normalized(&v);
        let mut nu = vec![0.0f64; o];
        for (i, nui) in nu.iter_mut().enumerate() {
            *nui = w[i * r..(i + 1) * r]
                .iter()
                .zip(v.iter())
                .map(|(&a, &b)| a * b)
                .sum();
        }
        let norm = nu.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return 0.0;
        }
        u = nu.iter().map(|x| x / norm).collect();
    }
    // sigma = u^T W v
    let mut s = 0.0;
    for i in 0..o {
        let wv: f64 = w[i * r..(i + 1) * r]
            .iter()
            .zip(v.iter())
            .map(|(&a, &b)| a * b)
            .sum();
        s += u[i] * wv;
    }
    s
}
