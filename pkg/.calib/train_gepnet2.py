import numpy as np, time
from mimodet.training import TrainConfig, train

cfg = TrainConfig(
    detector_kind='gepnet', n_rx=8, qam_order=4, k_train_set=(4, 8),
    snr_min_db=3, snr_max_db=21, epochs=120, batches_per_epoch=157,
    batch_size=64, lr=1e-3, val_samples=2048, seed=20250808,
    iterations=10, rounds=2, damping=0.7, patience=5,
    checkpoint_path='/root/pkg/.calib/gepnet_k48_v2.ckpt')
t0 = time.time()
res = train(cfg, progress=lambda row: print(f'epoch {row.epoch}: train {row.train_loss:.4f} val {row.val_loss:.4f} lr {row.lr:.2e}', flush=True))
print('done in %.1f min, best val %.4f' % ((time.time()-t0)/60, res.best_val_loss))
