//! Verify every architecture's manual backward pass against central
//! finite differences: the encoder alone, the discriminator loss, and the
//! sampler loss (hyperplane only, since the sampling distribution is the
//! sole gradient path by construction).

use denoise_re::adversarial::{
    confusing_probabilities, confusing_score, discriminator_loss, discriminator_loss_value,
    sampler_loss, sampler_loss_value, score_batch,
};
use denoise_re::corpus::Instance;
use denoise_re::encoders::{encode_backward, encode_eval, Arch, EncoderConfig, EncoderParams};
use denoise_re::gradcheck::{check_params, max_rel_err, DEFAULT_STEP};
use denoise_re::rng::{stream_rng, Stream};
use denoise_re::tensor::Tensor;

fn toy_instances() -> Vec<Instance> {
    vec![
        Instance {
            id: 0,
            tokens: vec![2, 5, 3, 6, 4],
            e1_pos: 1,
            e2_pos: 3,
            pair_id: 0,
            label: 1,
            noise_flag: None,
        },
        Instance {
            id: 1,
            tokens: vec![4, 2, 6],
            e1_pos: 0,
            e2_pos: 2,
            pair_id: 1,
            label: 2,
            noise_flag: None,
        },
        Instance {
            id: 2,
            tokens: vec![3, 5, 2, 4],
            e1_pos: 0,
            e2_pos: 3,
            pair_id: 2,
            label: 0, // NA: gradient spreads over all real relation rows
            noise_flag: None,
        },
    ]
}

fn encode_all(insts: &[Instance], p: &EncoderParams) -> denoise_re::Result<Vec<Tensor>> {
    insts
        .iter()
        .map(|i| Ok(encode_eval(i, p)?.y().clone()))
        .collect()
}

fn main() -> denoise_re::Result<()> {
    let insts = toy_instances();
    let ids: Vec<u64> = insts.iter().map(|i| i.id).collect();
    let labels: Vec<usize> = insts.iter().map(|i| i.label).collect();

    for arch in Arch::ALL {
        let cfg = EncoderConfig {
            arch,
            vocab_size: 8,
            n_relations: 3,
            max_len: 6,
            k_w: 4,
            k_p: 2,
            k_h: 3,
            window: 3,
            dropout_p: 0.0,
        };
        let mut rng = stream_rng(1, Stream::Init);
        let mut params = EncoderParams::new(&cfg, &mut rng)?;

        // encoder alone: loss = sum of all representations
        params.zero_grads();
        for inst in &insts {
            let enc = encode_eval(inst, &params)?;
            let ones = vec![1.0; enc.y().len()];
            encode_backward(enc, &ones, &mut params)?;
        }
        let report = check_params(&mut params, DEFAULT_STEP, |p| {
            let mut total = 0.0;
            for inst in &insts {
                total += encode_eval(inst, p)?.y().data().iter().sum::<f64>();
            }
            Ok(total)
        })?;
        println!(
            "{arch:>6} encoder       : {:>4} entries, max rel err {:.2e}",
            report.checked, report.max_rel_err
        );

        // discriminator loss, sampling distribution frozen
        let q = {
            let ys = encode_all(&insts, &params)?;
            let c: Vec<f64> = ys
                .iter()
                .map(|y| confusing_score(y, &params))
                .collect::<denoise_re::Result<_>>()?;
            confusing_probabilities(&c[1..], 1.0)?
        };
        params.zero_grads();
        let encs: Vec<_> = insts
            .iter()
            .map(|i| encode_eval(i, &params))
            .collect::<denoise_re::Result<_>>()?;
        let ys: Vec<Tensor> = encs.iter().map(|e| e.y().clone()).collect();
        let refs: Vec<&Tensor> = ys.iter().collect();
        let grads = discriminator_loss(
            &refs[..1],
            &labels[..1],
            &refs[1..],
            &labels[1..],
            &q,
            &mut params,
        )?;
        for (enc, dy) in encs
            .into_iter()
            .zip(grads.conf_dy.iter().chain(&grads.unconf_dy))
        {
            encode_backward(enc, dy, &mut params)?;
        }
        let report = check_params(&mut params, DEFAULT_STEP, |p| {
            let ys = encode_all(&insts, p)?;
            let refs: Vec<&Tensor> = ys.iter().collect();
            discriminator_loss_value(&refs[..1], &labels[..1], &refs[1..], &labels[1..], &q, p)
        })?;
        println!(
            "{arch:>6} discriminator : {:>4} entries, max rel err {:.2e}",
            report.checked, report.max_rel_err
        );

        // sampler loss: representations fixed, only the hyperplane moves
        params.zero_grads();
        let ys = encode_all(&insts, &params)?;
        let refs: Vec<&Tensor> = ys.iter().collect();
        let scores = score_batch(&refs, &ids, &labels, &params, 1.0)?;
        sampler_loss(&refs, &scores, &mut params)?;
        let analytic = params.hyperplane().grad().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        let mut probe = params.clone();
        for i in 0..numeric.len() {
            let orig = probe.hyperplane().data()[i];
            probe.hyperplane_mut().data_mut()[i] = orig + DEFAULT_STEP;
            let up = sampler_loss_value(&refs, &labels, &probe, 1.0)?;
            probe.hyperplane_mut().data_mut()[i] = orig - DEFAULT_STEP;
            let down = sampler_loss_value(&refs, &labels, &probe, 1.0)?;
            probe.hyperplane_mut().data_mut()[i] = orig;
            numeric[i] = (up - down) / (2.0 * DEFAULT_STEP);
        }
        println!(
            "{arch:>6} sampler       : {:>4} entries, max rel err {:.2e}",
            numeric.len(),
            max_rel_err(&analytic, &numeric)
        );
    }
    println!("\nall architectures agree with finite differences");
    Ok(())
}
