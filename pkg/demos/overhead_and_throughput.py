"""Frame plans of both schemes: reference-signal and beam-training savings, and what they buy in throughput."""

from nrisac.frame import ThroughputInputs, build_frame_plan, overhead_breakdown, overhead_metrics, throughput

conventional = build_frame_plan("conventional")
isac = build_frame_plan("isac")

print("Per-RB reference signals in one DDDSU window")
for plan in (conventional, isac):
    rs = plan.rs_per_rb_window()
    print(f"  {plan.scheme:13s} DMRS {rs['dmrs']:4.0f}  CSI-RS {rs['csirs']:4.0f}  "
          f"SSB slots per 20 ms {plan.training_slots}")

m = overhead_metrics(isac, conventional)
print(f"\nReference-signal reduction: {m.rs_reduction_vs:.2%}")
print(f"Beam-training reduction:    {m.training_reduction_vs:.0%}")

print("\nDownlink overhead by category")
for plan in (conventional, isac):
    parts = ", ".join(f"{k} {v:.2%}" for k, v in overhead_breakdown(plan).items())
    print(f"  {plan.scheme:13s} {parts}")

print("\nThroughput at zero BER (208 PRB, 16-QAM, mu = 3)")
peak = throughput(ThroughputInputs())
print(f"  no overhead   {peak:8.1f} Mbps")
for plan in (conventional, isac):
    oh = overhead_metrics(plan, conventional).oh_fraction
    print(f"  {plan.scheme:13s} {throughput(ThroughputInputs(overhead=oh)):8.1f} Mbps (overhead {oh:.2%})")
