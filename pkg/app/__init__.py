# Bank Distress Copula App
