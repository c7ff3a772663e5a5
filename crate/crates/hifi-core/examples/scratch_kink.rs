// scratch: verify failing FD coords are kink-contaminated (deleted after use)
use hifi_core::autodiff as ad;
use hifi_core::net::{self, NetworkConfig, NetworkVars};
use hifi_core::{init_params_with, Result, Shape, Tensor, Var};

fn main() -> Result<()> {
    let cfg = NetworkConfig::default();
    let params = init_params_with(&cfg, 77)?;
    let img = Tensor::uniform(Shape::new(1, 3, 8, 8), 0.0, 1.0, 78);
    let mut inputs: Vec<Tensor> = vec![img.clone()];
    let mut names = vec!["image".to_string()];
    for (n, t) in params.named_tensors() {
        inputs.push(t.clone());
        names.push(n);
    }
    let build = move |vars: &[Var]| -> Result<Var> {
        let nv = NetworkVars::from_leaves(&cfg, &vars[1..])?;
        let out = net::hifi_forward_vars(&vars[0], &nv)?;
        let w = Var::constant(Tensor::uniform(out.shape(), -1.0, 1.0, 99));
        Ok(ad::sum_all(&ad::mul(&out, &w)?))
    };
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let vars: Vec<Var> = tensors.iter().map(|t| Var::constant(t.clone())).collect();
        build(&vars)?.scalar_value()
    };
    let leaves: Vec<Var> = inputs.iter().map(|t| Var::param(t.clone())).collect();
    let loss = build(&leaves)?;
    let tape = hifi_core::GradTape::backward(&loss)?;

    let ti = names.iter().position(|n| n == "f3_proj.bias").unwrap();
    let analytic = tape.grad_or_zeros(&leaves[ti]);
    for j in 0..inputs[ti].numel().min(6) {
        let mut fd = |eps: f64| -> f64 {
            let mut work = inputs.clone();
            let mut plus = inputs[ti].data().to_vec();
            plus[j] += eps;
            work[ti] = Tensor::from_vec(inputs[ti].shape(), plus).unwrap();
            let fp = eval(&work).unwrap();
            let mut minus = inputs[ti].data().to_vec();
            minus[j] -= eps;
            work[ti] = Tensor::from_vec(inputs[ti].shape(), minus).unwrap();
            let fm = eval(&work).unwrap();
            (fp - fm) / (2.0 * eps)
        };
        let n1 = fd(1e-4);
        let n2 = fd(5e-5);
        let n3 = fd(1e-5);
        println!(
            "coord {j}: analytic {:+.9e}  fd(1e-4) {:+.9e}  fd(5e-5) {:+.9e}  fd(1e-5) {:+.9e}",
            analytic.data()[j], n1, n2, n3
        );
    }
    Ok(())
}
