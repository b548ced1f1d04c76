use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            activation,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            weights,
            ..Self::zeros(inputs, outputs, activation)
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.outputs, self.activation)
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn param(&self, i: usize) -> f64 {
        if i < self.weights.len() {
            self.weights[i]
        } else {
            self.bias[i - self.weights.len()]
        }
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let nw = self.weights.len();
        if i < nw {
            &mut self.weights[i]
        } else {
            &mut self.bias[i - nw]
        }
    }

    pub fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.inputs);
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.bias).map(|(row, b)| {
            let z = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            match self.activation {
                Activation::Linear => z,
                Activation::Relu => z.max(0.0),
            }
        }));
    }

    /// Accumulates parameter gradients into `grad` given the layer input `x`,
    /// its activated output `y` and `dy = dL/dy`. Returns `dL/dx` when asked.
    pub fn backward(
        &self,
        x: &[f64],
        y: &[f64],
        dy: &[f64],
        grad: &mut Dense,
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let mut dx = want_dx.then(|| vec![0.0; self.inputs]);
        for o in 0..self.outputs {
            let dz = match self.activation {
                Activation::Linear => dy[o],
                Activation::Relu if y[o] > 0.0 => dy[o],
                Activation::Relu => 0.0,
            };
            if dz == 0.0 {
                continue;
            }
            grad.bias[o] += dz;
            let row = o * self.inputs;
            for (g, v) in grad.weights[row..row + self.inputs].iter_mut().zip(x) {
                *g += dz * v;
            }
            if let Some(dx) = dx.as_mut() {
                for (d, w) in dx.iter_mut().zip(&self.weights[row..row + self.inputs]) {
                    *d += dz * w;
                }
            }
        }
        dx
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|v| *v *= s);
        self.bias.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Runs `layers` in sequence, returning every layer's output (input excluded).
pub fn forward_cached(layers: &[Dense], x: &[f64]) -> Vec<Vec<f64>> {
    let mut outs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    for layer in layers {
        let mut out = Vec::with_capacity(layer.outputs);
        layer.forward_into(outs.last().map_or(x, |v| v.as_slice()), &mut out);
        outs.push(out);
    }
    outs
}

/// Backpropagates `dout` through `layers` given the cache from [`forward_cached`].
/// Returns `dL/dx` if `want_dx`.
pub fn backward_cached(
    layers: &[Dense],
    x: &[f64],
    outs: &[Vec<f64>],
    dout: Vec<f64>,
    grads: &mut [Dense],
    want_dx: bool,
) -> Option<Vec<f64>> {
    let mut dy = dout;
    for i in (0..layers.len()).rev() {
        let input = if i == 0 { x } else { &outs[i - 1] };
        let need = i > 0 || want_dx;
        match layers[i].backward(input, &outs[i], &dy, &mut grads[i], need) {
            Some(d) => dy = d,
            None => return None,
        }
    }
    Some(dy)
}

/// `v' = momentum * v + g; p' = p - lr * v'`
pub fn sgd_update(params: &mut [Dense], grads: &[Dense], lr: f64, momentum: f64, velocity: &mut [Dense]) {
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((pw, gw), vw) in p.weights.iter_mut().zip(&g.weights).zip(v.weights.iter_mut()) {
            *vw = momentum * *vw + gw;
            *pw -= lr * *vw;
        }
        for ((pb, gb), vb) in p.bias.iter_mut().zip(&g.bias).zip(v.bias.iter_mut()) {
            *vb = momentum * *vb + gb;
            *pb -= lr * *vb;
        }
    }
}
