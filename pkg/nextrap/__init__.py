"""
nextrap: niet-lineaire extrapolatie van low-rank checkpoint trajecten

Dit pakket bevat:
- linalg / checkpoint I/O (rank-1 factoren, safetensors container, LoRA merge)
- trajectory lab: synthetische trajecten met bekende ground truth
- delta extractie + predictor training (encoder-decoder MLP, L1 loss)
- predict-extend extrapolatie, lineaire baselines en diagnostiek (energy ratio, R², ICER)
"""

__version__ = "0.1.0"
