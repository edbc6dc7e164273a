"""From raw detector uncertainty to a per-ROI trust modulus."""
import numpy as np

from codyn.config import ScenarioConfig
from codyn.detector import detect_frame
from codyn.flow import delay_decay, dftm, reduce_uncertainty
from codyn.pipeline import calibration_for
from codyn.scenario import AgentSpec, ObjectTrack, observe
from codyn.uncertainty import rescale_set

cfg = ScenarioConfig()
calib = calibration_for(cfg)
print("aleatoric channel:", calib.ale)
print("epistemic channel:", calib.epi)

# %% a collaborator sees three cars at growing range (plus whatever false alarms it makes)
agent = cfg.agents[1]
tracks = [ObjectTrack(i, (agent.pose[0] - d, 2.0, 0.0), (0.0, 0.0)) for i, d in enumerate((5, 18, 32))]
seer = AgentSpec(agent.id, agent.pose, sensing_range=40.0, detect_prob=1.0)
obs = observe(seer, tracks, 0.0, np.random.default_rng(1))
det = detect_frame(obs, cfg.detector, np.random.default_rng(2), seer)
resc = rescale_set(det.uncertainties, det.rois, calib)

print(f"{'range':>6} {'conf':>6} {'u_cls_ale':>9} {'u_cls_epi':>9} {'z_ale':>7} {'z_epi':>7} {'trust':>6}")
for roi, u in zip(det.rois, resc):
    s_bar, u_bar = reduce_uncertainty([(roi.confidence, u)])
    rng_m = np.hypot(roi.x - agent.pose[0], roi.y - agent.pose[1])
    print(f"{rng_m:6.1f} {roi.confidence:6.3f} {u.u_cls_ale:9.3f} {u.u_cls_epi:9.3f} "
          f"{u.u_reg_ale:7.2f} {u.u_reg_epi:7.2f} {dftm(s_bar, u_bar, 0.0, cfg.trust):6.3f}")

# %% delay only tempers trust gently: the exponent is counted in 100 ms frames
for dt in (0, 100, 300, 500, 1000):
    print(f"delay {dt:5d} ms -> decay {delay_decay(dt):.4f}")
