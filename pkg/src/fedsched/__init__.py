"""Federated, distillation-assisted DAG scheduling across Cloud-Edge-IoT
domains."""
